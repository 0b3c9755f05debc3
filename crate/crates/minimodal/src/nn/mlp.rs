//! Two-layer MLP with SiLU, the feed-forward half of a transformer block and
//! the building block of the projectors.

use crate::real::Real;
use crate::rng::Rng;

use super::linear::{Linear, LinearCache};
use super::ops::{silu, silu_grad};
use super::param::{Grads, ParamStore};

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct MlpCache<T> {
    c1: LinearCache<T>,
    pre: Vec<T>,
    c2: LinearCache<T>,
}

impl Mlp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        hidden: usize,
        dout: usize,
        rng: &mut Rng,
    ) -> Self {
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), din, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dout, rng),
        }
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &[T]) -> (Vec<T>, MlpCache<T>) {
        let (pre, c1) = self.fc1.forward(store, x);
        let act: Vec<T> = pre.iter().map(|&v| silu(v)).collect();
        let (y, c2) = self.fc2.forward(store, &act);
        (y, MlpCache { c1, pre, c2 })
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &MlpCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let dact = self.fc2.backward(store, &cache.c2, dy, grads);
        let dpre: Vec<T> = dact
            .iter()
            .zip(&cache.pre)
            .map(|(&d, &p)| d * silu_grad(p))
            .collect();
        self.fc1.backward(store, &cache.c1, &dpre, grads)
    }
}
