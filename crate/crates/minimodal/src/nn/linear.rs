//! Affine layer. Weights are stored [out, in] so forward is a row-dot kernel.

use crate::linalg::{mm, mm_tn};
use crate::real::Real;
use crate::rng::Rng;

use super::param::{Grads, Init, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub din: usize,
    pub dout: usize,
}

pub struct LinearCache<T> {
    x: Vec<T>,
    n: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut Rng,
    ) -> Self {
        let std = 1.0 / (din as f64).sqrt();
        let w = store.add(&format!("{name}.w"), &[dout, din], Init::Normal(std), rng);
        let b = store.add(&format!("{name}.b"), &[dout], Init::Zeros, rng);
        Linear { w, b, din, dout }
    }

    /// x: [n, din] -> [n, dout]
    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &[T]) -> (Vec<T>, LinearCache<T>) {
        let n = x.len() / self.din;
        debug_assert_eq!(x.len(), n * self.din);
        let w = store.value(self.w);
        let b = store.value(self.b);
        let mut y = crate::linalg::mm_nt(x, w, n, self.din, self.dout);
        for row in y.chunks_exact_mut(self.dout) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        (y, LinearCache { x: x.to_vec(), n })
    }

    /// dy: [n, dout] -> dx [n, din]; accumulates dW, db.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &LinearCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let n = cache.n;
        debug_assert_eq!(dy.len(), n * self.dout);
        // dW[o,i] += sum_r dy[r,o] * x[r,i]
        let dw = mm_tn(dy, &cache.x, self.dout, n, self.din);
        let gw = grads.of_mut(self.w);
        for (g, d) in gw.iter_mut().zip(&dw) {
            *g += *d;
        }
        let gb = grads.of_mut(self.b);
        for row in dy.chunks_exact(self.dout) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        // dx = dy · W
        mm(dy, store.value(self.w), n, self.dout, self.din)
    }
}
