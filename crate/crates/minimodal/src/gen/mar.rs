//! Masked-autoregressive encoder/decoder over continuous image tokens.
//!
//! The encoder sees only visible tokens (bidirectional attention among them);
//! the decoder sees the full grid — encoder states at visible slots, a
//! learned mask token elsewhere — plus per-position conditioning injected
//! from the language backbone, and emits one condition vector z per position.

use crate::error::{Error, Result};
use crate::nn::block::BlockCache;
use crate::nn::linear::LinearCache;
use crate::nn::norm::LayerNormCache;
use crate::nn::{Grads, Init, LayerNorm, Linear, ParamId, ParamStore, TransformerBlock};
use crate::real::Real;
use crate::rng::Rng;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MarConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub token_dim: usize,
    /// Initial token-grid side; positional tables resize on resolution
    /// switches.
    pub grid_side: usize,
}

impl Default for MarConfig {
    fn default() -> Self {
        MarConfig {
            enc_layers: 4,
            dec_layers: 4,
            width: 256,
            heads: 8,
            mlp_ratio: 4,
            token_dim: 12,
            grid_side: 8,
        }
    }
}

pub struct Mar {
    pub tok_embed: Linear,
    pub enc_pos: ParamId,
    pub sentinel: ParamId,
    pub enc_blocks: Vec<TransformerBlock>,
    pub enc_ln: LayerNorm,
    pub dec_pos: ParamId,
    pub mask_token: ParamId,
    pub dec_blocks: Vec<TransformerBlock>,
    pub dec_ln: LayerNorm,
    pub cfg: MarConfig,
}

pub struct MarEncodeCache<T> {
    te_cache: Option<LinearCache<T>>,
    block_caches: Vec<BlockCache<T>>,
    ln_cache: LayerNormCache<T>,
    positions: Vec<usize>,
}

pub struct MarDecodeCache<T> {
    block_caches: Vec<BlockCache<T>>,
    ln_cache: LayerNormCache<T>,
    visible_positions: Vec<usize>,
    n_tokens: usize,
}

impl Mar {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: MarConfig, rng: &mut Rng) -> Self {
        assert!(cfg.width % cfg.heads == 0);
        let n = cfg.grid_side * cfg.grid_side;
        let tok_embed = Linear::new(store, "mar.enc.tok", cfg.token_dim, cfg.width, rng);
        let enc_pos = store.add("mar.enc.pos", &[n, cfg.width], Init::Normal(0.02), rng);
        let sentinel = store.add("mar.enc.sentinel", &[1, cfg.width], Init::Normal(0.02), rng);
        let enc_blocks = (0..cfg.enc_layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("mar.enc.block{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect();
        let enc_ln = LayerNorm::new(store, "mar.enc.ln_f", cfg.width, rng);
        let dec_pos = store.add("mar.dec.pos", &[n, cfg.width], Init::Normal(0.02), rng);
        let mask_token = store.add("mar.dec.mask", &[1, cfg.width], Init::Normal(0.02), rng);
        let dec_blocks = (0..cfg.dec_layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("mar.dec.block{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect();
        let dec_ln = LayerNorm::new(store, "mar.dec.ln_f", cfg.width, rng);
        Mar {
            tok_embed,
            enc_pos,
            sentinel,
            enc_blocks,
            enc_ln,
            dec_pos,
            mask_token,
            dec_blocks,
            dec_ln,
            cfg,
        }
    }

    /// Current token count (side²), tracking positional-table resizes.
    pub fn n_tokens<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.shape(self.enc_pos)[0]
    }

    /// Encodes visible tokens at the given grid positions. With no visible
    /// tokens the learned sentinel provides a single state.
    pub fn encode<T: Real>(
        &self,
        store: &ParamStore<T>,
        tokens: &[T],
        positions: &[usize],
    ) -> Result<(Vec<T>, MarEncodeCache<T>)> {
        let w = self.cfg.width;
        if tokens.len() != positions.len() * self.cfg.token_dim {
            return Err(Error::Config(format!(
                "token dim mismatch: {} values for {} positions (dim {})",
                tokens.len(),
                positions.len(),
                self.cfg.token_dim
            )));
        }
        let n_pos = self.n_tokens(store);
        if positions.iter().any(|&p| p >= n_pos) {
            return Err(Error::Input("visible position outside grid".into()));
        }

        let (mut x, te_cache) = if positions.is_empty() {
            (store.value(self.sentinel).to_vec(), None)
        } else {
            let (e, c) = self.tok_embed.forward(store, tokens);
            (e, Some(c))
        };
        if !positions.is_empty() {
            let pos = store.value(self.enc_pos);
            for (r, &p) in positions.iter().enumerate() {
                for i in 0..w {
                    x[r * w + i] += pos[p * w + i];
                }
            }
        }
        let v = x.len() / w;
        let mask = vec![true; v * v];
        let mut block_caches = Vec::new();
        for b in &self.enc_blocks {
            let (y, c) = b.forward(store, &x, &mask);
            x = y;
            block_caches.push(c);
        }
        let (h, ln_cache) = self.enc_ln.forward(store, &x);
        Ok((
            h,
            MarEncodeCache {
                te_cache,
                block_caches,
                ln_cache,
                positions: positions.to_vec(),
            },
        ))
    }

    pub fn encode_backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &MarEncodeCache<T>,
        d_states: &[T],
        grads: &mut Grads<T>,
    ) {
        let w = self.cfg.width;
        let mut dx = self.enc_ln.backward(store, &cache.ln_cache, d_states, grads);
        for (b, c) in self.enc_blocks.iter().zip(&cache.block_caches).rev() {
            dx = b.backward(store, c, &dx, grads);
        }
        if cache.positions.is_empty() {
            let g = grads.of_mut(self.sentinel);
            for (gv, d) in g.iter_mut().zip(&dx) {
                *gv += *d;
            }
            return;
        }
        {
            let g = grads.of_mut(self.enc_pos);
            for (r, &p) in cache.positions.iter().enumerate() {
                for i in 0..w {
                    g[p * w + i] += dx[r * w + i];
                }
            }
        }
        if let Some(te) = &cache.te_cache {
            let _ = self.tok_embed.backward(store, te, &dx, grads);
        }
    }

    /// Decodes the full grid into per-position condition vectors z.
    /// `condition` must hold one backbone-derived vector per grid position.
    pub fn decode<T: Real>(
        &self,
        store: &ParamStore<T>,
        enc_states: &[T],
        visible_positions: &[usize],
        condition: &[T],
    ) -> Result<(Vec<T>, MarDecodeCache<T>)> {
        let w = self.cfg.width;
        let n = self.n_tokens(store);
        if condition.len() != n * w {
            return Err(Error::Input(format!(
                "condition length {} misaligned with {} positions × width {w}",
                condition.len(),
                n
            )));
        }
        let mask_tok = store.value(self.mask_token).to_vec();
        let dec_pos = store.value(self.dec_pos);
        let mut x = vec![T::ZERO; n * w];
        for p in 0..n {
            x[p * w..(p + 1) * w].copy_from_slice(&mask_tok);
        }
        for (r, &p) in visible_positions.iter().enumerate() {
            x[p * w..(p + 1) * w].copy_from_slice(&enc_states[r * w..(r + 1) * w]);
        }
        for i in 0..n * w {
            x[i] += dec_pos[i] + condition[i];
        }
        let mask = vec![true; n * n];
        let mut block_caches = Vec::new();
        for b in &self.dec_blocks {
            let (y, c) = b.forward(store, &x, &mask);
            x = y;
            block_caches.push(c);
        }
        let (z, ln_cache) = self.dec_ln.forward(store, &x);
        Ok((
            z,
            MarDecodeCache {
                block_caches,
                ln_cache,
                visible_positions: visible_positions.to_vec(),
                n_tokens: n,
            },
        ))
    }

    /// Backward through the decoder. Returns (d_enc_states, d_condition).
    pub fn decode_backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &MarDecodeCache<T>,
        dz: &[T],
        grads: &mut Grads<T>,
    ) -> (Vec<T>, Vec<T>) {
        let w = self.cfg.width;
        let n = cache.n_tokens;
        let mut dx = self.dec_ln.backward(store, &cache.ln_cache, dz, grads);
        for (b, c) in self.dec_blocks.iter().zip(&cache.block_caches).rev() {
            dx = b.backward(store, c, &dx, grads);
        }
        // dx splits into dec_pos grad, condition grad, and either enc-state
        // grads (visible) or mask-token grads (masked)
        {
            let g = grads.of_mut(self.dec_pos);
            for i in 0..n * w {
                g[i] += dx[i];
            }
        }
        let d_condition = dx.clone();
        let mut visible = vec![false; n];
        for &p in &cache.visible_positions {
            visible[p] = true;
        }
        {
            let g = grads.of_mut(self.mask_token);
            for p in 0..n {
                if !visible[p] {
                    for i in 0..w {
                        g[i] += dx[p * w + i];
                    }
                }
            }
        }
        let mut d_enc = vec![T::ZERO; cache.visible_positions.len() * w];
        for (r, &p) in cache.visible_positions.iter().enumerate() {
            d_enc[r * w..(r + 1) * w].copy_from_slice(&dx[p * w..(p + 1) * w]);
        }
        (d_enc, d_condition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ParamStore<f64>, Mar) {
        let mut rng = Rng::new(21);
        let mut store = ParamStore::new();
        let mar = Mar::new(
            &mut store,
            MarConfig {
                enc_layers: 2,
                dec_layers: 2,
                width: 16,
                heads: 2,
                mlp_ratio: 2,
                token_dim: 4,
                grid_side: 3,
            },
            &mut rng,
        );
        (store, mar)
    }

    #[test]
    fn encoder_output_count_matches_visible_count() {
        let (store, mar) = tiny();
        let mut rng = Rng::new(1);
        let tokens: Vec<f64> = rng.normal_vec(5 * 4);
        let (h, _) = mar.encode(&store, &tokens, &[0, 2, 4, 6, 8]).unwrap();
        assert_eq!(h.len(), 5 * 16);
    }

    #[test]
    fn zero_visible_yields_single_sentinel_state() {
        let (store, mar) = tiny();
        let (h, _) = mar.encode(&store, &[], &[]).unwrap();
        assert_eq!(h.len(), 16);
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let (store, mar) = tiny();
        let mut rng = Rng::new(2);
        let tokens: Vec<f64> = rng.normal_vec(4 * 4);
        let positions = [1usize, 3, 5, 7];
        let (h, _) = mar.encode(&store, &tokens, &positions).unwrap();

        // permute (tokens, positions) jointly by reversal
        let mut tokens_rev = Vec::new();
        for r in (0..4).rev() {
            tokens_rev.extend_from_slice(&tokens[r * 4..(r + 1) * 4]);
        }
        let positions_rev = [7usize, 5, 3, 1];
        let (h_rev, _) = mar.encode(&store, &tokens_rev, &positions_rev).unwrap();
        for r in 0..4 {
            let a = &h[r * 16..(r + 1) * 16];
            let b = &h_rev[(3 - r) * 16..(4 - r) * 16];
            for i in 0..16 {
                assert!((a[i] - b[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn decoder_output_per_position_and_condition_flows() {
        let (store, mar) = tiny();
        let mut rng = Rng::new(3);
        let tokens: Vec<f64> = rng.normal_vec(3 * 4);
        let visible = [0usize, 4, 8];
        let (enc, _) = mar.encode(&store, &tokens, &visible).unwrap();
        let cond: Vec<f64> = rng.normal_vec(9 * 16);
        let (z, _) = mar.decode(&store, &enc, &visible, &cond).unwrap();
        assert_eq!(z.len(), 9 * 16);

        let zeroed = vec![0.0; 9 * 16];
        let (z0, _) = mar.decode(&store, &enc, &visible, &zeroed).unwrap();
        let diff: f64 = z.iter().zip(&z0).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-3, "condition does not flow (diff {diff})");
    }

    #[test]
    fn misaligned_condition_is_rejected() {
        let (store, mar) = tiny();
        let (enc, _) = mar.encode(&store, &[], &[]).unwrap();
        let cond = vec![0.0; 4 * 16];
        assert!(mar.decode(&store, &enc, &[], &cond).is_err());
    }
}
