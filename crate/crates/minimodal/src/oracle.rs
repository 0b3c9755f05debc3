//! Deterministic object detector for the synthetic world.
//!
//! Pixels are classified to the nearest palette color (with a distance cap),
//! grouped into 4-connected components, and each component is classified by
//! geometric profile: its mask is resampled onto a fixed 8×8 occupancy grid
//! and matched against per-shape reference profiles derived from the
//! rasterizer's own large-shape masks. On clean renders detection
//! reconstructs the spec exactly; the cap and an area floor give robustness
//! to light noise.

use std::sync::OnceLock;

use crate::scene::render::object_pixels;
use crate::scene::{
    Cell, Color, EditCase, Image, ObjectSpec, SceneSpec, Shape, Size, BACKGROUND_RGB, GRID,
    PALETTE,
};

#[derive(Clone, Debug)]
pub struct OracleConfig {
    /// L∞ classification cap; pixels farther than this from every palette
    /// entry (and background) stay unclassified.
    pub palette_cap: i32,
    /// Components below this pixel area are ignored as noise.
    pub area_floor: usize,
    /// Mean absolute difference tolerance for grayscale style checks, on the
    /// [0, 1] scale.
    pub style_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            palette_cap: 54,
            area_floor: 5,
            style_tol: 0.05,
        }
    }
}

/// One detected object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detected {
    pub shape: Shape,
    pub color: Color,
    pub cell: Cell,
    pub area: usize,
    pub bbox: (usize, usize, usize, usize),
}

#[inline]
fn linf(a: [u8; 3], b: [u8; 3]) -> i32 {
    let mut m = 0;
    for i in 0..3 {
        let d = (a[i] as i32 - b[i] as i32).abs();
        if d > m {
            m = d;
        }
    }
    m
}

/// Per-pixel label: Some(color) for an object pixel, None for background or
/// unclassifiable.
fn classify_pixel(rgb: [u8; 3], cap: i32) -> Option<Color> {
    let mut best: Option<(i32, Option<Color>)> = None;
    for (c, prgb) in PALETTE {
        let d = linf(rgb, prgb);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, Some(c)));
        }
    }
    let dbg = linf(rgb, BACKGROUND_RGB);
    if best.map_or(true, |(bd, _)| dbg < bd) {
        best = Some((dbg, None));
    }
    match best {
        Some((d, label)) if d <= cap => label,
        _ => None,
    }
}

/// Fraction of pixels that are neither close to the palette nor to the
/// background — a cheap noise measure.
pub fn unclassifiable_fraction(img: &Image, cfg: &OracleConfig) -> f64 {
    let mut bad = 0usize;
    let n = img.size * img.size;
    for y in 0..img.size {
        for x in 0..img.size {
            let rgb = img.get(x, y);
            let dmin = PALETTE
                .iter()
                .map(|(_, p)| linf(rgb, *p))
                .chain(std::iter::once(linf(rgb, BACKGROUND_RGB)))
                .min()
                .unwrap();
            if dmin > cfg.palette_cap {
                bad += 1;
            }
        }
    }
    bad as f64 / n as f64
}

const PROFILE_SIDE: usize = 8;

/// Bbox-normalized occupancy profile of a pixel mask. Returns per-bin fill
/// fractions plus a coverage mask: when a small mask upsamples onto the grid,
/// some bins receive no source pixels and carry no information.
fn profile(pixels: &[(usize, usize)], bbox: (usize, usize, usize, usize)) -> (Vec<f64>, Vec<bool>) {
    let (x0, y0, x1, y1) = bbox;
    let w = x1 - x0 + 1;
    let h = y1 - y0 + 1;
    let mut hits = vec![0.0f64; PROFILE_SIDE * PROFILE_SIDE];
    let mut total = vec![0.0f64; PROFILE_SIDE * PROFILE_SIDE];
    for yy in 0..h {
        for xx in 0..w {
            let gx = (xx * PROFILE_SIDE / w).min(PROFILE_SIDE - 1);
            let gy = (yy * PROFILE_SIDE / h).min(PROFILE_SIDE - 1);
            total[gy * PROFILE_SIDE + gx] += 1.0;
        }
    }
    for &(x, y) in pixels {
        let xx = x - x0;
        let yy = y - y0;
        let gx = (xx * PROFILE_SIDE / w).min(PROFILE_SIDE - 1);
        let gy = (yy * PROFILE_SIDE / h).min(PROFILE_SIDE - 1);
        hits[gy * PROFILE_SIDE + gx] += 1.0;
    }
    let covered: Vec<bool> = total.iter().map(|&t| t > 0.0).collect();
    for i in 0..hits.len() {
        if total[i] > 0.0 {
            hits[i] /= total[i];
        }
    }
    (hits, covered)
}

/// Reference profiles from the rasterizer's own large shapes at 64².
fn shape_profiles() -> &'static [(Shape, Vec<f64>)] {
    static PROFILES: OnceLock<Vec<(Shape, Vec<f64>)>> = OnceLock::new();
    PROFILES.get_or_init(|| {
        Shape::ALL
            .iter()
            .map(|&shape| {
                let o = ObjectSpec {
                    shape,
                    color: Color::Red,
                    size: Size::Large,
                    cell: Cell(4),
                };
                let px = object_pixels(&o, 64);
                let x0 = px.iter().map(|p| p.0).min().unwrap();
                let x1 = px.iter().map(|p| p.0).max().unwrap();
                let y0 = px.iter().map(|p| p.1).min().unwrap();
                let y1 = px.iter().map(|p| p.1).max().unwrap();
                (shape, profile(&px, (x0, y0, x1, y1)).0)
            })
            .collect()
    })
}

fn classify_shape(pixels: &[(usize, usize)], bbox: (usize, usize, usize, usize)) -> Shape {
    let (p, covered) = profile(pixels, bbox);
    let mut best = (f64::INFINITY, Shape::Circle);
    for (shape, template) in shape_profiles() {
        let mut d = 0.0f64;
        let mut n = 0.0f64;
        for i in 0..p.len() {
            if covered[i] {
                d += (p[i] - template[i]).abs();
                n += 1.0;
            }
        }
        d /= n.max(1.0);
        if d < best.0 {
            best = (d, *shape);
        }
    }
    best.1
}

/// Connected components over palette-classified pixels; shape by profile
/// matching; cell by centroid.
pub fn detect_objects(img: &Image, cfg: &OracleConfig) -> Vec<Detected> {
    let s = img.size;
    let labels: Vec<Option<Color>> = (0..s * s)
        .map(|i| classify_pixel(img.get(i % s, i / s), cfg.palette_cap))
        .collect();
    let mut seen = vec![false; s * s];
    let mut out = Vec::new();
    for start in 0..s * s {
        let color = match labels[start] {
            Some(c) if !seen[start] => c,
            _ => continue,
        };
        // flood fill, 8-connectivity (diagonal star arms stay connected)
        let mut stack = vec![start];
        seen[start] = true;
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % s, i / s);
            pixels.push((x, y));
            for (dx, dy) in [
                (-1i64, -1i64),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ] {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= s as i64 || ny >= s as i64 {
                    continue;
                }
                let j = (ny as usize) * s + nx as usize;
                if !seen[j] && labels[j] == Some(color) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if pixels.len() < cfg.area_floor {
            continue;
        }
        let x0 = pixels.iter().map(|p| p.0).min().unwrap();
        let x1 = pixels.iter().map(|p| p.0).max().unwrap();
        let y0 = pixels.iter().map(|p| p.1).min().unwrap();
        let y1 = pixels.iter().map(|p| p.1).max().unwrap();
        let n = pixels.len() as f64;
        let cx: f64 = pixels.iter().map(|p| p.0 as f64 + 0.5).sum::<f64>() / n;
        let cy: f64 = pixels.iter().map(|p| p.1 as f64 + 0.5).sum::<f64>() / n;
        let cell_sz = s as f64 / GRID as f64;
        let col = ((cx / cell_sz) as usize).min(GRID - 1);
        let row = ((cy / cell_sz) as usize).min(GRID - 1);
        out.push(Detected {
            shape: classify_shape(&pixels, (x0, y0, x1, y1)),
            color,
            cell: Cell((row * GRID + col) as u8),
            area: pixels.len(),
            bbox: (x0, y0, x1, y1),
        });
    }
    out.sort_by_key(|d| (d.cell, d.color, d.shape));
    out
}

/// Sorted (shape, color, cell) facts of a detection list.
pub fn detection_facts(dets: &[Detected]) -> Vec<(Shape, Color, Cell)> {
    let mut f: Vec<_> = dets.iter().map(|d| (d.shape, d.color, d.cell)).collect();
    f.sort();
    f
}

/// Detection reconstructs the spec exactly: same multiset of
/// (shape, color, cell).
pub fn matches_spec(img: &Image, spec: &SceneSpec, cfg: &OracleConfig) -> bool {
    detection_facts(&detect_objects(img, cfg)) == spec.facts()
}

/// Oracle check that an edit output implements the instructed change.
pub fn verify_edit(output: &Image, case: &EditCase, cfg: &OracleConfig) -> bool {
    if case.edit_kind == crate::scene::EditKind::Style {
        let expected = crate::scene::render(&case.source).grayscale();
        return output.mean_abs_diff(&expected) <= cfg.style_tol;
    }
    matches_spec(output, &case.target, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::scene::{render, sample_scene, Category};

    #[test]
    fn blank_image_yields_zero_detections() {
        let img = Image::filled(32, BACKGROUND_RGB);
        assert!(detect_objects(&img, &OracleConfig::default()).is_empty());
    }

    #[test]
    fn detection_reconstructs_sampled_scenes_exactly() {
        let cfg = OracleConfig::default();
        let mut rng = Rng::new(77);
        for canvas in [16usize, 32] {
            for i in 0..300 {
                let spec = sample_scene(&mut rng, Category::ALL[i % 6], canvas);
                let img = render(&spec);
                let dets = detect_objects(&img, &cfg);
                assert_eq!(
                    detection_facts(&dets),
                    spec.facts(),
                    "canvas {canvas} scene {spec:?} → {dets:?}"
                );
            }
        }
    }

    #[test]
    fn one_percent_salt_noise_rarely_breaks_detection() {
        let cfg = OracleConfig::default();
        let mut rng = Rng::new(99);
        let mut ok = 0;
        let total = 200;
        for i in 0..total {
            let spec = sample_scene(&mut rng, Category::ALL[i % 6], 32);
            let mut img = render(&spec);
            let n_noise = (img.size * img.size) / 100;
            for _ in 0..n_noise {
                let x = rng.below(img.size);
                let y = rng.below(img.size);
                img.set(x, y, [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8]);
            }
            if matches_spec(&img, &spec, &cfg) {
                ok += 1;
            }
        }
        assert!(ok * 100 >= total * 95, "only {ok}/{total} robust to salt noise");
    }

    #[test]
    fn corrupting_a_scene_changes_detection() {
        let cfg = OracleConfig::default();
        let mut rng = Rng::new(7);
        let spec = sample_scene(&mut rng, Category::ColorAttr, 32);
        let mut corrupted = spec.clone();
        corrupted.objects[0].color = if corrupted.objects[0].color == Color::Red {
            Color::Blue
        } else {
            Color::Red
        };
        let img = render(&corrupted);
        assert!(!matches_spec(&img, &spec, &cfg));
        assert!(matches_spec(&img, &corrupted, &cfg));
    }
}
