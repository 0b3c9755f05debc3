//! Pre-LN transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).

use crate::real::Real;
use crate::rng::Rng;

use super::attention::{AttentionCache, MultiheadAttention};
use super::mlp::{Mlp, MlpCache};
use super::norm::{LayerNorm, LayerNormCache};
use super::param::{Grads, ParamStore};

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiheadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

pub struct BlockCache<T> {
    cl1: LayerNormCache<T>,
    ca: AttentionCache<T>,
    cl2: LayerNormCache<T>,
    cm: MlpCache<T>,
}

impl TransformerBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut Rng,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim, rng),
            attn: MultiheadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim, rng),
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, dim, rng),
        }
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        mask: &[bool],
    ) -> (Vec<T>, BlockCache<T>) {
        let (a, cl1) = self.ln1.forward(store, x);
        let (b, ca) = self.attn.forward(store, &a, mask);
        let mut x1 = x.to_vec();
        for (v, &bv) in x1.iter_mut().zip(&b) {
            *v += bv;
        }
        let (c, cl2) = self.ln2.forward(store, &x1);
        let (d, cm) = self.mlp.forward(store, &c);
        let mut y = x1;
        for (v, &dv) in y.iter_mut().zip(&d) {
            *v += dv;
        }
        (y, BlockCache { cl1, ca, cl2, cm })
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &BlockCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let dc = self.mlp.backward(store, &cache.cm, dy, grads);
        let mut dx1 = self.ln2.backward(store, &cache.cl2, &dc, grads);
        for (v, &d) in dx1.iter_mut().zip(dy) {
            *v += d;
        }
        let da = self.attn.backward(store, &cache.ca, &dx1, grads);
        let mut dx = self.ln1.backward(store, &cache.cl1, &da, grads);
        for (v, &d) in dx.iter_mut().zip(&dx1) {
            *v += d;
        }
        dx
    }
}
