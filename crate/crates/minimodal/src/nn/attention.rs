//! Multi-head self-attention with an arbitrary boolean attention mask.
//!
//! The mask is row-major [len, len]: entry (q, k) says whether query position
//! q may attend to key position k. Causal text, bidirectional image segments
//! and anything in between are all just masks.

use crate::real::Real;
use crate::rng::Rng;

use super::linear::{Linear, LinearCache};
use super::ops::masked_softmax_row;
use super::param::{Grads, ParamStore};

#[derive(Clone, Debug)]
pub struct MultiheadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub dim: usize,
    pub heads: usize,
}

pub struct AttentionCache<T> {
    cq: LinearCache<T>,
    ck: LinearCache<T>,
    cv: LinearCache<T>,
    co: LinearCache<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Softmax probabilities, [heads][len*len] flattened.
    probs: Vec<T>,
    len: usize,
}

impl MultiheadAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(dim % heads == 0, "width {dim} not divisible by heads {heads}");
        MultiheadAttention {
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, rng),
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, rng),
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, rng),
            dim,
            heads,
        }
    }

    /// x: [len, dim]; mask: [len*len] row-major allowed(q, k).
    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        mask: &[bool],
    ) -> (Vec<T>, AttentionCache<T>) {
        let d = self.dim;
        let h = self.heads;
        let dh = d / h;
        let len = x.len() / d;
        debug_assert_eq!(mask.len(), len * len);
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let (q, cq) = self.wq.forward(store, x);
        let (k, ck) = self.wk.forward(store, x);
        let (v, cv) = self.wv.forward(store, x);

        let mut probs = vec![T::ZERO; h * len * len];
        let mut ctx = vec![T::ZERO; len * d];
        for head in 0..h {
            let off = head * dh;
            for qi in 0..len {
                let qrow = &q[qi * d + off..qi * d + off + dh];
                let prow = &mut probs[(head * len + qi) * len..(head * len + qi + 1) * len];
                for ki in 0..len {
                    if mask[qi * len + ki] {
                        let krow = &k[ki * d + off..ki * d + off + dh];
                        prow[ki] = crate::linalg::dot(qrow, krow) * scale;
                    }
                }
                masked_softmax_row(prow, &mask[qi * len..(qi + 1) * len]);
                let crow = &mut ctx[qi * d + off..qi * d + off + dh];
                for ki in 0..len {
                    let p = prow[ki];
                    if p != T::ZERO {
                        let vrow = &v[ki * d + off..ki * d + off + dh];
                        for t in 0..dh {
                            crow[t] += p * vrow[t];
                        }
                    }
                }
            }
        }

        let (y, co) = self.wo.forward(store, &ctx);
        (
            y,
            AttentionCache {
                cq,
                ck,
                cv,
                co,
                q,
                k,
                v,
                probs,
                len,
            },
        )
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &AttentionCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let d = self.dim;
        let h = self.heads;
        let dh = d / h;
        let len = cache.len;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let dctx = self.wo.backward(store, &cache.co, dy, grads);

        let mut dq = vec![T::ZERO; len * d];
        let mut dk = vec![T::ZERO; len * d];
        let mut dv = vec![T::ZERO; len * d];

        for head in 0..h {
            let off = head * dh;
            for qi in 0..len {
                let prow = &cache.probs[(head * len + qi) * len..(head * len + qi + 1) * len];
                let dctx_row = &dctx[qi * d + off..qi * d + off + dh];

                // dP[ki] = dot(dctx_row, v_ki); dV += p * dctx_row
                let mut dp = vec![T::ZERO; len];
                for ki in 0..len {
                    let p = prow[ki];
                    if p != T::ZERO {
                        let vrow = &cache.v[ki * d + off..ki * d + off + dh];
                        dp[ki] = crate::linalg::dot(dctx_row, vrow);
                        let dvrow = &mut dv[ki * d + off..ki * d + off + dh];
                        for t in 0..dh {
                            dvrow[t] += p * dctx_row[t];
                        }
                    }
                }
                // softmax backward: dS = P ∘ (dP - sum(dP ∘ P))
                let mut inner = T::ZERO;
                for ki in 0..len {
                    inner += dp[ki] * prow[ki];
                }
                let qrow = &cache.q[qi * d + off..qi * d + off + dh];
                let dqrow_acc: &mut [T] = &mut dq[qi * d + off..qi * d + off + dh];
                for ki in 0..len {
                    let p = prow[ki];
                    if p != T::ZERO {
                        let ds = p * (dp[ki] - inner) * scale;
                        let krow = &cache.k[ki * d + off..ki * d + off + dh];
                        for t in 0..dh {
                            dqrow_acc[t] += ds * krow[t];
                        }
                        let dkrow = &mut dk[ki * d + off..ki * d + off + dh];
                        for t in 0..dh {
                            dkrow[t] += ds * qrow[t];
                        }
                    }
                }
            }
        }

        let mut dx = self.wq.backward(store, &cache.cq, &dq, grads);
        let dxk = self.wk.backward(store, &cache.ck, &dk, grads);
        let dxv = self.wv.backward(store, &cache.cv, &dv, grads);
        for i in 0..dx.len() {
            dx[i] += dxk[i] + dxv[i];
        }
        dx
    }
}
