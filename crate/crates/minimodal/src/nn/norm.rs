//! Layer normalization over the last dimension.

use crate::real::Real;
use crate::rng::Rng;

use super::param::{Grads, Init, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    n: usize,
}

const EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut Rng) -> Self {
        let gain = store.add(&format!("{name}.g"), &[dim], Init::Const(1.0), rng);
        let bias = store.add(&format!("{name}.b"), &[dim], Init::Zeros, rng);
        LayerNorm { gain, bias, dim }
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &[T]) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.dim;
        let n = x.len() / d;
        let g = store.value(self.gain);
        let b = store.value(self.bias);
        let inv_d = T::ONE / T::from_f64(d as f64);
        let mut y = vec![T::ZERO; x.len()];
        let mut xhat = vec![T::ZERO; x.len()];
        let mut inv_std = vec![T::ZERO; n];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let is = T::ONE / (var + T::from_f64(EPS)).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let xh = (row[i] - mean) * is;
                xhat[r * d + i] = xh;
                y[r * d + i] = xh * g[i] + b[i];
            }
        }
        (y, LayerNormCache { xhat, inv_std, n })
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &LayerNormCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let d = self.dim;
        let n = cache.n;
        let g = store.value(self.gain);
        let inv_d = T::ONE / T::from_f64(d as f64);
        let mut dx = vec![T::ZERO; dy.len()];
        {
            let gg = grads.of_mut(self.gain);
            for r in 0..n {
                for i in 0..d {
                    gg[i] += dy[r * d + i] * cache.xhat[r * d + i];
                }
            }
        }
        {
            let gb = grads.of_mut(self.bias);
            for r in 0..n {
                for i in 0..d {
                    gb[i] += dy[r * d + i];
                }
            }
        }
        for r in 0..n {
            let dyr = &dy[r * d..(r + 1) * d];
            let xhr = &cache.xhat[r * d..(r + 1) * d];
            let mut mean_dxhat = T::ZERO;
            let mut mean_dxhat_xhat = T::ZERO;
            for i in 0..d {
                let dxh = dyr[i] * g[i];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhr[i];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            let is = cache.inv_std[r];
            for i in 0..d {
                let dxh = dyr[i] * g[i];
                dx[r * d + i] = is * (dxh - mean_dxhat - xhr[i] * mean_dxhat_xhat);
            }
        }
        dx
    }
}
