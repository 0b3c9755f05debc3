//! 8-bit RGB image buffer with PNG round-trip.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub size: usize,
    /// Row-major RGB, `size * size * 3` bytes.
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(size: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            data.extend_from_slice(&rgb);
        }
        Image { size, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.size + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-averaged copy (rounded to nearest).
    pub fn grayscale(&self) -> Image {
        let mut out = self.clone();
        for p in out.data.chunks_exact_mut(3) {
            let v = ((p[0] as u32 + p[1] as u32 + p[2] as u32) as f64 / 3.0).round() as u8;
            p[0] = v;
            p[1] = v;
            p[2] = v;
        }
        out
    }

    /// Mean absolute difference per channel, on the [0, 1] scale.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        sum / (self.data.len() as f64 * 255.0)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.size as u32, self.size as u32, self.data.clone())
                .expect("buffer size matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?;
        let rgb = img.to_rgb8();
        if rgb.width() != rgb.height() {
            return Err(Error::Input(format!(
                "image must be square, got {}x{}",
                rgb.width(),
                rgb.height()
            )));
        }
        Ok(Image {
            size: rgb.width() as usize,
            data: rgb.into_raw(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::filled(16, [240, 240, 240]);
        img.set(3, 5, [200, 0, 0]);
        img.set(15, 15, [0, 0, 200]);
        let p = dir.path().join("x.png");
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn grayscale_averages_channels() {
        let img = Image::filled(4, [200, 0, 0]);
        let g = img.grayscale();
        assert_eq!(g.get(0, 0), [67, 67, 67]);
    }
}
