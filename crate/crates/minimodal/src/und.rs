//! Understanding branch: bidirectional patch-transformer over the image plus
//! a two-layer projector into the backbone embedding space (the projector
//! itself lives with the model wiring; this module is the encoder).

use crate::codec::{normalize, patchify};
use crate::error::{Error, Result};
use crate::nn::block::BlockCache;
use crate::nn::linear::LinearCache;
use crate::nn::norm::LayerNormCache;
use crate::nn::{Grads, Init, LayerNorm, Linear, ParamId, ParamStore, TransformerBlock};
use crate::real::Real;
use crate::rng::Rng;
use crate::scene::Image;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SemanticEncoderConfig {
    pub patch_size: usize,
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for SemanticEncoderConfig {
    fn default() -> Self {
        SemanticEncoderConfig {
            patch_size: 8,
            layers: 4,
            width: 256,
            heads: 8,
            mlp_ratio: 4,
        }
    }
}

pub struct SemanticEncoder {
    pub patch_embed: Linear,
    pub pos: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub cfg: SemanticEncoderConfig,
    pub n_patches: usize,
}

pub struct SemanticCache<T> {
    pe_cache: LinearCache<T>,
    block_caches: Vec<BlockCache<T>>,
    ln_cache: LayerNormCache<T>,
}

impl SemanticEncoder {
    /// `image_side` fixes the positional table (understanding resolution is
    /// constant across stages).
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        cfg: SemanticEncoderConfig,
        image_side: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if image_side % cfg.patch_size != 0 {
            return Err(Error::Config(format!(
                "image side {image_side} not divisible by patch {}",
                cfg.patch_size
            )));
        }
        let side = image_side / cfg.patch_size;
        let n_patches = side * side;
        let in_dim = 3 * cfg.patch_size * cfg.patch_size;
        let patch_embed = Linear::new(store, "und_enc.patch", in_dim, cfg.width, rng);
        let pos = store.add("und_enc.pos", &[n_patches, cfg.width], Init::Normal(0.02), rng);
        let blocks = (0..cfg.layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("und_enc.block{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect();
        let ln_f = LayerNorm::new(store, "und_enc.ln_f", cfg.width, rng);
        Ok(SemanticEncoder {
            patch_embed,
            pos,
            blocks,
            ln_f,
            cfg,
            n_patches,
        })
    }

    /// Image → per-patch features. Bidirectional attention over patches,
    /// learned positional embeddings added before the first block.
    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        img: &Image,
    ) -> Result<(Vec<T>, SemanticCache<T>)> {
        let grid = normalize::<T>(img);
        let patches = patchify(&grid.values, grid.size, 3, self.cfg.patch_size)?;
        if patches.n_tokens() != self.n_patches {
            return Err(Error::Config(format!(
                "encoder built for {} patches, image gives {}",
                self.n_patches,
                patches.n_tokens()
            )));
        }
        let (mut x, pe_cache) = self.patch_embed.forward(store, &patches.tokens);
        let pos = store.value(self.pos);
        for i in 0..x.len() {
            x[i] += pos[i];
        }
        let mask = vec![true; self.n_patches * self.n_patches];
        let mut block_caches = Vec::new();
        for b in &self.blocks {
            let (y, c) = b.forward(store, &x, &mask);
            x = y;
            block_caches.push(c);
        }
        let (h, ln_cache) = self.ln_f.forward(store, &x);
        Ok((
            h,
            SemanticCache {
                pe_cache,
                block_caches,
                ln_cache,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &SemanticCache<T>,
        d_features: &[T],
        grads: &mut Grads<T>,
    ) {
        let mut dx = self.ln_f.backward(store, &cache.ln_cache, d_features, grads);
        for (b, c) in self.blocks.iter().zip(&cache.block_caches).rev() {
            dx = b.backward(store, c, &dx, grads);
        }
        // positional table gradient
        {
            let g = grads.of_mut(self.pos);
            for i in 0..dx.len() {
                g[i] += dx[i];
            }
        }
        let _ = self.patch_embed.backward(store, &cache.pe_cache, &dx, grads);
    }
}
