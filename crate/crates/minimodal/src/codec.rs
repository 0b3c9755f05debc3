//! Image ↔ continuous-token conversion.
//!
//! Default mode tokenizes raw pixels directly (flattened patches in raster
//! order); the alternative routes pixels through a small frozen autoencoder
//! first, standing in for a pretrained latent codec. Either way the
//! generation pathway only ever sees a [`TokenGrid`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::silu_grad;
use crate::nn::{Grads, Linear, ParamStore};
use crate::real::Real;
use crate::rng::Rng;
use crate::scene::Image;

/// Square float image with values in [-1, 1], HWC layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid<T> {
    pub size: usize,
    pub values: Vec<T>,
}

impl<T: Real> ImageGrid<T> {
    pub fn new(size: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != size * size * 3 {
            return Err(Error::Input(format!(
                "image grid expects {} values, got {}",
                size * size * 3,
                values.len()
            )));
        }
        Ok(ImageGrid { size, values })
    }
}

/// Raster-ordered (row-major) continuous tokens; token k holds the flattened
/// patch at raster position k.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid<T> {
    pub side: usize,
    pub dim: usize,
    pub tokens: Vec<T>,
}

impl<T: Real> TokenGrid<T> {
    pub fn n_tokens(&self) -> usize {
        self.side * self.side
    }

    pub fn token(&self, k: usize) -> &[T] {
        &self.tokens[k * self.dim..(k + 1) * self.dim]
    }
}

/// Affine map [0,255] → [-1,1]; 255 → 1.0, 0 → -1.0, 127.5 → 0.0.
pub fn normalize<T: Real>(img: &Image) -> ImageGrid<T> {
    let values = img
        .data
        .iter()
        .map(|&b| T::from_f64(b as f64 / 127.5 - 1.0))
        .collect();
    ImageGrid {
        size: img.size,
        values,
    }
}

/// Inverse affine map with rounding and clamping.
pub fn denormalize<T: Real>(grid: &ImageGrid<T>) -> Image {
    let data = grid
        .values
        .iter()
        .map(|&v| ((v.to_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image {
        size: grid.size,
        data,
    }
}

/// Splits an interleaved [side, side, ch] map into raster-ordered tokens of
/// dim `ch * patch²`.
pub fn patchify<T: Real>(values: &[T], size: usize, ch: usize, patch: usize) -> Result<TokenGrid<T>> {
    if size % patch != 0 {
        return Err(Error::Input(format!(
            "size {size} not divisible by patch {patch}"
        )));
    }
    let side = size / patch;
    let dim = ch * patch * patch;
    let mut tokens = vec![T::ZERO; side * side * dim];
    for pi in 0..side {
        for pj in 0..side {
            let t = pi * side + pj;
            let mut o = 0;
            for dy in 0..patch {
                for dx in 0..patch {
                    let y = pi * patch + dy;
                    let x = pj * patch + dx;
                    for c in 0..ch {
                        tokens[t * dim + o] = values[(y * size + x) * ch + c];
                        o += 1;
                    }
                }
            }
        }
    }
    Ok(TokenGrid { side, dim, tokens })
}

/// Exact inverse of [`patchify`].
pub fn unpatchify<T: Real>(grid: &TokenGrid<T>, ch: usize, patch: usize) -> Vec<T> {
    let size = grid.side * patch;
    debug_assert_eq!(grid.dim, ch * patch * patch);
    let mut values = vec![T::ZERO; size * size * ch];
    for pi in 0..grid.side {
        for pj in 0..grid.side {
            let t = pi * grid.side + pj;
            let tok = grid.token(t);
            let mut o = 0;
            for dy in 0..patch {
                for dx in 0..patch {
                    let y = pi * patch + dy;
                    let x = pj * patch + dx;
                    for c in 0..ch {
                        values[(y * size + x) * ch + c] = tok[o];
                        o += 1;
                    }
                }
            }
        }
    }
    values
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecMode {
    IdentityPatch,
    LearnedAe,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodecConfig {
    pub mode: CodecMode,
    pub patch_size: usize,
    /// learned_ae only
    pub latent_dim: usize,
    /// learned_ae only
    pub downsample_factor: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            mode: CodecMode::IdentityPatch,
            patch_size: 2,
            latent_dim: 12,
            downsample_factor: 4,
        }
    }
}

impl CodecConfig {
    pub fn token_dim(&self) -> usize {
        match self.mode {
            CodecMode::IdentityPatch => 3 * self.patch_size * self.patch_size,
            CodecMode::LearnedAe => self.latent_dim * self.patch_size * self.patch_size,
        }
    }

    pub fn token_side(&self, image_size: usize) -> Result<usize> {
        match self.mode {
            CodecMode::IdentityPatch => {
                if image_size % self.patch_size != 0 {
                    return Err(Error::Config(format!(
                        "image side {image_size} not divisible by patch {}",
                        self.patch_size
                    )));
                }
                Ok(image_size / self.patch_size)
            }
            CodecMode::LearnedAe => {
                let block = self.downsample_factor * self.patch_size;
                if image_size % block != 0 {
                    return Err(Error::Config(format!(
                        "image side {image_size} not divisible by downsample×patch {block}"
                    )));
                }
                Ok(image_size / block)
            }
        }
    }
}

/// Per-block MLP autoencoder over `downsample²` pixel blocks.
struct AeModel<T: Real> {
    store: ParamStore<T>,
    enc1: Linear,
    enc2: Linear,
    dec1: Linear,
    dec2: Linear,
    /// per-latent-dim normalization statistics (mean, std)
    stats: Vec<(f64, f64)>,
    frozen: bool,
}

const AE_HIDDEN: usize = 64;

impl<T: Real> AeModel<T> {
    fn new(cfg: &CodecConfig, rng: &mut Rng) -> Self {
        let block_dim = cfg.downsample_factor * cfg.downsample_factor * 3;
        let mut store = ParamStore::new();
        let enc1 = Linear::new(&mut store, "codec.enc1", block_dim, AE_HIDDEN, rng);
        let enc2 = Linear::new(&mut store, "codec.enc2", AE_HIDDEN, cfg.latent_dim, rng);
        let dec1 = Linear::new(&mut store, "codec.dec1", cfg.latent_dim, AE_HIDDEN, rng);
        let dec2 = Linear::new(&mut store, "codec.dec2", AE_HIDDEN, block_dim, rng);
        AeModel {
            store,
            enc1,
            enc2,
            dec1,
            dec2,
            stats: vec![(0.0, 1.0); cfg.latent_dim],
            frozen: false,
        }
    }

    fn encode_blocks(&self, blocks: &[T], n: usize) -> Vec<T> {
        let (h, _) = self.enc1.forward(&self.store, blocks);
        let act: Vec<T> = h.iter().map(|&v| crate::nn::ops::silu(v)).collect();
        let (z, _) = self.enc2.forward(&self.store, &act);
        debug_assert_eq!(z.len() % n, 0);
        z
    }

    fn decode_blocks(&self, z: &[T]) -> Vec<T> {
        let (h, _) = self.dec1.forward(&self.store, z);
        let act: Vec<T> = h.iter().map(|&v| crate::nn::ops::silu(v)).collect();
        let (y, _) = self.dec2.forward(&self.store, &act);
        y
    }
}

/// Image ↔ token codec. Stateless for reads after construction/training.
pub struct Codec<T: Real> {
    pub cfg: CodecConfig,
    ae: Option<AeModel<T>>,
}

impl<T: Real> Codec<T> {
    pub fn identity(patch_size: usize) -> Self {
        Codec {
            cfg: CodecConfig {
                mode: CodecMode::IdentityPatch,
                patch_size,
                ..Default::default()
            },
            ae: None,
        }
    }

    pub fn new(cfg: CodecConfig) -> Self {
        Codec { cfg, ae: None }
    }

    pub fn token_dim(&self) -> usize {
        self.cfg.token_dim()
    }

    pub fn is_trained(&self) -> bool {
        match self.cfg.mode {
            CodecMode::IdentityPatch => true,
            CodecMode::LearnedAe => self.ae.as_ref().map_or(false, |a| a.frozen),
        }
    }

    /// Digest of codec parameters (empty-store digest in identity mode);
    /// training stages assert it never changes.
    pub fn digest_hex(&self) -> String {
        match &self.ae {
            Some(a) => a.store.group_digest_hex(""),
            None => "identity".to_string(),
        }
    }

    pub fn tokens_from_image(&self, img: &Image) -> Result<TokenGrid<T>> {
        let grid = normalize::<T>(img);
        match self.cfg.mode {
            CodecMode::IdentityPatch => patchify(&grid.values, grid.size, 3, self.cfg.patch_size),
            CodecMode::LearnedAe => {
                let ae = self.ae.as_ref().ok_or(Error::UninitializedCodec)?;
                if !ae.frozen {
                    return Err(Error::UninitializedCodec);
                }
                let df = self.cfg.downsample_factor;
                let latent_side = grid.size / df;
                if grid.size % df != 0 {
                    return Err(Error::Config(format!(
                        "image side {} not divisible by downsample {df}",
                        grid.size
                    )));
                }
                // blocks in raster order → latent map [latent_side², latent_dim]
                let blocks = patchify(&grid.values, grid.size, 3, df)?;
                let z = ae.encode_blocks(&blocks.tokens, blocks.n_tokens());
                let ld = self.cfg.latent_dim;
                let mut zn = z;
                for (i, v) in zn.iter_mut().enumerate() {
                    let (m, s) = ae.stats[i % ld];
                    *v = (*v - T::from_f64(m)) / T::from_f64(s);
                }
                patchify(&zn, latent_side, ld, self.cfg.patch_size)
            }
        }
    }

    pub fn image_from_tokens(&self, grid: &TokenGrid<T>) -> Result<Image> {
        match self.cfg.mode {
            CodecMode::IdentityPatch => {
                let values = unpatchify(grid, 3, self.cfg.patch_size);
                let size = grid.side * self.cfg.patch_size;
                Ok(denormalize(&ImageGrid { size, values }))
            }
            CodecMode::LearnedAe => {
                let ae = self.ae.as_ref().ok_or(Error::UninitializedCodec)?;
                let ld = self.cfg.latent_dim;
                let mut zn = unpatchify(grid, ld, self.cfg.patch_size);
                for (i, v) in zn.iter_mut().enumerate() {
                    let (m, s) = ae.stats[i % ld];
                    *v = *v * T::from_f64(s) + T::from_f64(m);
                }
                let latent_side = grid.side * self.cfg.patch_size;
                let df = self.cfg.downsample_factor;
                let blocks = ae.decode_blocks(&zn);
                let values = unpatchify(
                    &TokenGrid {
                        side: latent_side,
                        dim: df * df * 3,
                        tokens: blocks,
                    },
                    3,
                    df,
                );
                Ok(denormalize(&ImageGrid {
                    size: latent_side * df,
                    values,
                }))
            }
        }
    }

    /// Trains the autoencoder on rendered scenes with plain Adam on MSE, then
    /// computes per-dim latent statistics. Call [`Codec::freeze`] afterwards.
    pub fn train_ae(&mut self, images: &[Image], steps: usize, lr: f64, seed: u64) -> Result<f64> {
        if self.cfg.mode != CodecMode::LearnedAe {
            return Err(Error::Config("train_ae in identity mode".into()));
        }
        if self.ae.as_ref().map_or(false, |a| a.frozen) {
            return Err(Error::FrozenCodec("parameter update rejected".into()));
        }
        let mut rng = Rng::new(seed);
        let mut ae = AeModel::new(&self.cfg, &mut rng);
        let df = self.cfg.downsample_factor;

        // gather all blocks from all images
        let mut blocks: Vec<Vec<T>> = Vec::new();
        for img in images {
            let grid = normalize::<T>(img);
            let p = patchify(&grid.values, grid.size, 3, df)?;
            for k in 0..p.n_tokens() {
                blocks.push(p.token(k).to_vec());
            }
        }
        let block_dim = df * df * 3;
        let batch = 256.min(blocks.len());

        // Adam state
        let ids: Vec<_> = ae.store.ids().collect();
        let mut m: Vec<Vec<T>> = ids.iter().map(|&i| vec![T::ZERO; ae.store.value(i).len()]).collect();
        let mut v = m.clone();
        let mut last = f64::MAX;
        for step in 1..=steps {
            let mut x = Vec::with_capacity(batch * block_dim);
            for _ in 0..batch {
                let b = &blocks[rng.below(blocks.len())];
                x.extend_from_slice(b);
            }
            let mut grads = ae.store.grads();
            // forward
            let (h1, c1) = ae.enc1.forward(&ae.store, &x);
            let a1: Vec<T> = h1.iter().map(|&u| crate::nn::ops::silu(u)).collect();
            let (z, c2) = ae.enc2.forward(&ae.store, &a1);
            let (h2, c3) = ae.dec1.forward(&ae.store, &z);
            let a2: Vec<T> = h2.iter().map(|&u| crate::nn::ops::silu(u)).collect();
            let (y, c4) = ae.dec2.forward(&ae.store, &a2);
            let (loss, dy) = crate::nn::ops::mse(&y, &x);
            last = loss.to_f64();
            // backward
            let da2 = ae.dec2.backward(&ae.store, &c4, &dy, &mut grads);
            let dh2: Vec<T> = da2.iter().zip(&h2).map(|(&d, &u)| d * silu_grad(u)).collect();
            let dz = ae.dec1.backward(&ae.store, &c3, &dh2, &mut grads);
            let da1 = ae.enc2.backward(&ae.store, &c2, &dz, &mut grads);
            let dh1: Vec<T> = da1.iter().zip(&h1).map(|(&d, &u)| d * silu_grad(u)).collect();
            let _ = ae.enc1.backward(&ae.store, &c1, &dh1, &mut grads);
            // Adam
            adam_step(&mut ae.store, &grads, &ids, &mut m, &mut v, step, lr);
        }

        // latent statistics over the training set
        let ld = self.cfg.latent_dim;
        let mut mean = vec![0.0f64; ld];
        let mut sq = vec![0.0f64; ld];
        let mut count = 0usize;
        for b in &blocks {
            let z = ae.encode_blocks(b, 1);
            for (i, zv) in z.iter().enumerate() {
                mean[i % ld] += zv.to_f64();
                sq[i % ld] += zv.to_f64() * zv.to_f64();
            }
            count += 1;
        }
        for i in 0..ld {
            mean[i] /= count as f64;
            let var = (sq[i] / count as f64 - mean[i] * mean[i]).max(1e-12);
            ae.stats[i] = (mean[i], var.sqrt());
        }
        self.ae = Some(ae);
        Ok(last)
    }

    /// Marks the autoencoder immutable; all later training stages see the
    /// codec as a constant.
    pub fn freeze(&mut self) -> Result<()> {
        match &mut self.ae {
            Some(a) => {
                a.frozen = true;
                Ok(())
            }
            None => Err(Error::UninitializedCodec),
        }
    }

    /// Mean per-pixel absolute reconstruction error on [-1, 1] scale.
    pub fn reconstruction_error(&self, img: &Image) -> Result<f64> {
        let tokens = self.tokens_from_image(img)?;
        let back = self.image_from_tokens(&tokens)?;
        Ok(img.mean_abs_diff(&back) * 2.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = CodecCheckpoint {
            cfg: self.cfg.clone(),
            stats: self.ae.as_ref().map(|a| a.stats.clone()),
            params: self.ae.as_ref().map(|a| {
                a.store
                    .ids()
                    .map(|id| {
                        (
                            a.store.name(id).to_string(),
                            a.store.shape(id).to_vec(),
                            a.store.value(id).iter().map(|v| v.to_f64()).collect(),
                        )
                    })
                    .collect()
            }),
        };
        fs::write(path, serde_json::to_string(&ckpt)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Codec<T>> {
        let ckpt: CodecCheckpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        let mut codec = Codec::new(ckpt.cfg);
        if let Some(params) = ckpt.params {
            let mut rng = Rng::new(0);
            let mut ae = AeModel::new(&codec.cfg, &mut rng);
            for (name, shape, values) in params {
                let id = ae
                    .store
                    .lookup(&name)
                    .ok_or_else(|| Error::Corrupt(format!("unknown codec param {name}")))?;
                let tv: Vec<T> = values.into_iter().map(T::from_f64).collect();
                ae.store.reshape(id, shape, tv);
            }
            ae.stats = ckpt
                .stats
                .ok_or_else(|| Error::Corrupt("codec stats missing".into()))?;
            ae.frozen = true;
            codec.ae = Some(ae);
        }
        Ok(codec)
    }
}

fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &Grads<T>,
    ids: &[crate::nn::ParamId],
    m: &mut [Vec<T>],
    v: &mut [Vec<T>],
    step: usize,
    lr: f64,
) {
    let b1 = 0.9;
    let b2 = 0.999;
    let bc1 = 1.0 - b1.powi(step as i32);
    let bc2 = 1.0 - b2.powi(step as i32);
    for (k, &id) in ids.iter().enumerate() {
        let g = grads.of(id);
        let val = store.value_mut(id);
        for i in 0..val.len() {
            let gi = g[i].to_f64();
            let mi = m[k][i].to_f64() * b1 + (1.0 - b1) * gi;
            let vi = v[k][i].to_f64() * b2 + (1.0 - b2) * gi * gi;
            m[k][i] = T::from_f64(mi);
            v[k][i] = T::from_f64(vi);
            let upd = lr * (mi / bc1) / ((vi / bc2).sqrt() + 1e-8);
            val[i] = T::from_f64(val[i].to_f64() - upd);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CodecCheckpoint {
    cfg: CodecConfig,
    stats: Option<Vec<(f64, f64)>>,
    params: Option<Vec<(String, Vec<usize>, Vec<f64>)>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::scene::{render, sample_scene, Category};

    #[test]
    fn normalize_endpoints_and_midpoint() {
        assert_eq!(255.0 / 127.5 - 1.0, 1.0);
        assert_eq!(0.0 / 127.5 - 1.0, -1.0);
        assert_eq!(127.5 / 127.5 - 1.0, 0.0);
    }

    #[test]
    fn denormalize_normalize_is_identity_on_bytes() {
        let mut img = Image::filled(4, [0, 0, 0]);
        for (i, b) in img.data.iter_mut().enumerate() {
            *b = (i * 7 % 256) as u8;
        }
        let grid = normalize::<f64>(&img);
        assert_eq!(denormalize(&grid), img);
    }

    #[test]
    fn normalize_round_trip_error_within_quantization() {
        // float → byte → float loses at most half a step (1/255 on [-1,1])
        let vals = [-1.0f64, -0.503, 0.0, 0.377, 0.9999, 1.0];
        for &v in &vals {
            let b = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            let back = b as f64 / 127.5 - 1.0;
            assert!((back - v).abs() <= 1.0 / 255.0 + 1e-12, "{v}");
        }
    }

    #[test]
    fn patchify_shapes_and_raster_order() {
        // 4×4×3 image, patch 2 → 4 tokens of dim 12
        let values: Vec<f64> = (0..48).map(|i| i as f64).collect();
        let grid = patchify(&values, 4, 3, 2).unwrap();
        assert_eq!(grid.n_tokens(), 4);
        assert_eq!(grid.dim, 12);
        // token 0 = top-left patch: pixels (0,0),(1,0),(0,1),(1,1)
        assert_eq!(
            grid.token(0),
            &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0]
        );
        let back = unpatchify(&grid, 3, 2);
        assert_eq!(back, values);
    }

    #[test]
    fn indivisible_patch_is_rejected() {
        let values = vec![0.0f64; 5 * 5 * 3];
        assert!(patchify(&values, 5, 3, 2).is_err());
    }

    #[test]
    fn identity_codec_round_trips_renders() {
        let codec: Codec<f64> = Codec::identity(2);
        let mut rng = Rng::new(3);
        let spec = sample_scene(&mut rng, Category::TwoObject, 16);
        let img = render(&spec);
        let tokens = codec.tokens_from_image(&img).unwrap();
        assert_eq!(tokens.side, 8);
        assert_eq!(tokens.dim, 12);
        assert_eq!(codec.image_from_tokens(&tokens).unwrap(), img);
    }

    #[test]
    fn ae_untrained_rejected_and_freeze_contract() {
        let mut codec: Codec<f32> = Codec::new(CodecConfig {
            mode: CodecMode::LearnedAe,
            patch_size: 1,
            latent_dim: 8,
            downsample_factor: 4,
        });
        let mut rng = Rng::new(4);
        let img = render(&sample_scene(&mut rng, Category::Colors, 32));
        assert!(matches!(
            codec.tokens_from_image(&img),
            Err(Error::UninitializedCodec)
        ));
        let images: Vec<Image> = (0..64)
            .map(|i| render(&sample_scene(&mut Rng::new(i), Category::ALL[i as usize % 6], 32)))
            .collect();
        codec.train_ae(&images, 150, 3e-3, 7).unwrap();
        codec.freeze().unwrap();
        // updates after freeze are rejected
        assert!(matches!(
            codec.train_ae(&images, 1, 3e-3, 7),
            Err(Error::FrozenCodec(_))
        ));
        let tokens = codec.tokens_from_image(&img).unwrap();
        assert_eq!(tokens.side, 8);
        assert_eq!(tokens.dim, 8);
    }

    #[test]
    fn trained_ae_reconstructs_scenes() {
        let mut codec: Codec<f32> = Codec::new(CodecConfig {
            mode: CodecMode::LearnedAe,
            patch_size: 1,
            latent_dim: 12,
            downsample_factor: 4,
        });
        let images: Vec<Image> = (0..300)
            .map(|i| render(&sample_scene(&mut Rng::new(1000 + i), Category::ALL[i as usize % 6], 32)))
            .collect();
        codec.train_ae(&images, 1200, 3e-3, 11).unwrap();
        codec.freeze().unwrap();
        let mut total = 0.0;
        let held_out: Vec<Image> = (0..40)
            .map(|i| render(&sample_scene(&mut Rng::new(9000 + i), Category::ALL[i as usize % 6], 32)))
            .collect();
        for img in &held_out {
            total += codec.reconstruction_error(img).unwrap();
        }
        let mean = total / held_out.len() as f64;
        assert!(mean < 0.05, "mean reconstruction error {mean}");
    }
}
