//! Shared decoder-only language model.
//!
//! Consumes pre-assembled embedding sequences (token embeddings, projected
//! image features, placeholders), applies learned absolute positions and the
//! block stack under an attention plan, and exposes final-norm hidden states.
//! Text logits come from a linear head over selected positions.

use crate::error::Result;
use crate::nn::block::BlockCache;
use crate::nn::linear::LinearCache;
use crate::nn::norm::LayerNormCache;
use crate::nn::ops::cross_entropy;
use crate::nn::{Grads, Init, LayerNorm, Linear, ParamId, ParamStore, TransformerBlock};
use crate::real::Real;
use crate::rng::Rng;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LMConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub max_seq_len: usize,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig {
            layers: 6,
            width: 256,
            heads: 8,
            mlp_ratio: 4,
            max_seq_len: 600,
        }
    }
}

pub struct Backbone {
    pub emb: crate::nn::Embedding,
    pub pos: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub lm_head: Linear,
    pub cfg: LMConfig,
}

pub struct BackboneCache<T> {
    block_caches: Vec<BlockCache<T>>,
    ln_cache: LayerNormCache<T>,
    len: usize,
}

pub struct LogitsCache<T> {
    head_cache: LinearCache<T>,
    positions: Vec<usize>,
}

impl Backbone {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        vocab_size: usize,
        cfg: LMConfig,
        rng: &mut Rng,
    ) -> Self {
        assert!(cfg.width % cfg.heads == 0);
        let emb = crate::nn::Embedding::new(store, "backbone.emb", vocab_size, cfg.width, rng);
        let pos = store.add(
            "backbone.pos",
            &[cfg.max_seq_len, cfg.width],
            Init::Normal(0.02),
            rng,
        );
        let blocks = (0..cfg.layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("backbone.block{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect();
        let ln_f = LayerNorm::new(store, "backbone.ln_f", cfg.width, rng);
        let lm_head = Linear::new(store, "backbone.head", cfg.width, vocab_size, rng);
        Backbone {
            emb,
            pos,
            blocks,
            ln_f,
            lm_head,
            cfg,
        }
    }

    /// Adds position embeddings in place for rows 0..len.
    pub fn add_positions<T: Real>(&self, store: &ParamStore<T>, embs: &mut [T]) {
        let w = self.cfg.width;
        let pos = store.value(self.pos);
        let len = embs.len() / w;
        assert!(len <= self.cfg.max_seq_len, "sequence {len} over max");
        for p in 0..len {
            for i in 0..w {
                embs[p * w + i] += pos[p * w + i];
            }
        }
    }

    pub fn pos_grad<T: Real>(&self, d_embs: &[T], grads: &mut Grads<T>) {
        let w = self.cfg.width;
        let g = grads.of_mut(self.pos);
        let len = d_embs.len() / w;
        for p in 0..len {
            for i in 0..w {
                g[p * w + i] += d_embs[p * w + i];
            }
        }
    }

    /// Block stack + final norm. Input embeddings must already include
    /// positions.
    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        embs: &[T],
        mask: &[bool],
    ) -> (Vec<T>, BackboneCache<T>) {
        let len = embs.len() / self.cfg.width;
        let mut x = embs.to_vec();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(store, &x, mask);
            x = y;
            block_caches.push(c);
        }
        let (h, ln_cache) = self.ln_f.forward(store, &x);
        (
            h,
            BackboneCache {
                block_caches,
                ln_cache,
                len,
            },
        )
    }

    /// Backward through norm and blocks; returns gradient w.r.t. the input
    /// embeddings (positions included).
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &BackboneCache<T>,
        d_hidden: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let mut dx = self.ln_f.backward(store, &cache.ln_cache, d_hidden, grads);
        for (b, c) in self.blocks.iter().zip(&cache.block_caches).rev() {
            dx = b.backward(store, c, &dx, grads);
        }
        debug_assert_eq!(dx.len(), cache.len * self.cfg.width);
        dx
    }

    /// Logits over the vocabulary at the given positions.
    pub fn logits_at<T: Real>(
        &self,
        store: &ParamStore<T>,
        hidden: &[T],
        positions: &[usize],
    ) -> (Vec<T>, LogitsCache<T>) {
        let w = self.cfg.width;
        let mut rows = Vec::with_capacity(positions.len() * w);
        for &p in positions {
            rows.extend_from_slice(&hidden[p * w..(p + 1) * w]);
        }
        let (logits, head_cache) = self.lm_head.forward(store, &rows);
        (
            logits,
            LogitsCache {
                head_cache,
                positions: positions.to_vec(),
            },
        )
    }

    /// Scatters head-input gradients back into a full-length d_hidden buffer.
    pub fn logits_backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &LogitsCache<T>,
        d_logits: &[T],
        seq_len: usize,
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let w = self.cfg.width;
        let d_rows = self.lm_head.backward(store, &cache.head_cache, d_logits, grads);
        let mut d_hidden = vec![T::ZERO; seq_len * w];
        for (r, &p) in cache.positions.iter().enumerate() {
            for i in 0..w {
                d_hidden[p * w + i] += d_rows[r * w + i];
            }
        }
        d_hidden
    }
}

/// Mean negative log-likelihood of `targets` from logits rows.
/// Fails on zero loss positions.
pub fn understanding_loss<T: Real>(
    logits: &[T],
    vocab_size: usize,
    targets: &[usize],
) -> Result<(T, Vec<T>)> {
    if targets.is_empty() {
        return Err(crate::error::Error::Input(
            "understanding loss over zero positions".into(),
        ));
    }
    Ok(cross_entropy(logits, vocab_size, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::layout::{SegmentKind, SequenceLayout};

    fn tiny_backbone() -> (ParamStore<f64>, Backbone) {
        let mut rng = Rng::new(5);
        let mut store = ParamStore::new();
        let cfg = LMConfig {
            layers: 2,
            width: 16,
            heads: 2,
            mlp_ratio: 2,
            max_seq_len: 32,
        };
        let b = Backbone::new(&mut store, 20, cfg, &mut rng);
        (store, b)
    }

    #[test]
    fn causality_text_positions_ignore_the_future() {
        let (store, b) = tiny_backbone();
        let layout = SequenceLayout::new(&[(SegmentKind::Text, 6)]);
        let mask = layout.attention_mask();
        let mut rng = Rng::new(9);
        let base: Vec<f64> = rng.normal_vec(6 * 16);
        let (h0, _) = b.forward(&store, &base, &mask);
        let mut perturbed = base.clone();
        perturbed[5 * 16 + 3] += 1.0; // position 5
        let (h1, _) = b.forward(&store, &perturbed, &mask);
        // positions 0..4 unchanged exactly
        for p in 0..5 {
            for i in 0..16 {
                assert_eq!(h0[p * 16 + i], h1[p * 16 + i], "leak at {p}");
            }
        }
        assert_ne!(h0[5 * 16..6 * 16], h1[5 * 16..6 * 16]);
    }

    #[test]
    fn image_segments_are_bidirectional() {
        let (store, b) = tiny_backbone();
        let layout = SequenceLayout::new(&[(SegmentKind::Text, 2), (SegmentKind::GenImage, 4)]);
        let mask = layout.attention_mask();
        let mut rng = Rng::new(10);
        let base: Vec<f64> = rng.normal_vec(6 * 16);
        let (h0, _) = b.forward(&store, &base, &mask);
        let mut perturbed = base.clone();
        perturbed[5 * 16] += 1.0; // last image position
        let (h1, _) = b.forward(&store, &perturbed, &mask);
        // earlier image position changes (bidirectional within segment)
        assert_ne!(h0[2 * 16..3 * 16], h1[2 * 16..3 * 16]);
        // text before the segment unchanged
        assert_eq!(h0[..2 * 16], h1[..2 * 16]);
    }

    #[test]
    fn logit_width_is_vocab_size() {
        let (store, b) = tiny_backbone();
        let layout = SequenceLayout::new(&[(SegmentKind::Text, 4)]);
        let mask = layout.attention_mask();
        let mut rng = Rng::new(11);
        let x: Vec<f64> = rng.normal_vec(4 * 16);
        let (h, _) = b.forward(&store, &x, &mask);
        let (logits, _) = b.logits_at(&store, &h, &[0, 2]);
        assert_eq!(logits.len(), 2 * 20);
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let logits = vec![0.0f64; 4];
        let (loss, _) = understanding_loss(&logits, 4, &[1]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!(understanding_loss::<f64>(&[], 4, &[]).is_err());
    }
}
