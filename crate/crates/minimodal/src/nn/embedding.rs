//! Token embedding table with scatter-add backward.

use crate::real::Real;
use crate::rng::Rng;

use super::param::{Grads, Init, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let table = store.add(name, &[vocab, dim], Init::Normal(0.02), rng);
        Embedding { table, vocab, dim }
    }

    pub fn gather<T: Real>(&self, store: &ParamStore<T>, ids: &[usize]) -> Vec<T> {
        let t = store.value(self.table);
        let mut out = vec![T::ZERO; ids.len() * self.dim];
        for (r, &id) in ids.iter().enumerate() {
            debug_assert!(id < self.vocab);
            out[r * self.dim..(r + 1) * self.dim]
                .copy_from_slice(&t[id * self.dim..(id + 1) * self.dim]);
        }
        out
    }

    pub fn scatter_grad<T: Real>(&self, ids: &[usize], dy: &[T], grads: &mut Grads<T>) {
        let g = grads.of_mut(self.table);
        for (r, &id) in ids.iter().enumerate() {
            for i in 0..self.dim {
                g[id * self.dim + i] += dy[r * self.dim + i];
            }
        }
    }
}
