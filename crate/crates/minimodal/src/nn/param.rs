//! Parameter arena, gradient buffers and group digests.
//!
//! Parameters carry hierarchical dot-separated names ("backbone.block0.attn.wq").
//! The leading segments form parameter groups; stage freezing, the optimizer
//! and checkpoint digests all select by name prefix.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::real::Real;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Normal with the given standard deviation.
    Normal(f64),
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![T::ZERO; n],
            Init::Const(c) => vec![T::from_f64(c); n],
            Init::Normal(std) => (0..n).map(|_| T::from_f64(rng.normal() * std)).collect(),
        };
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id.0);
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<T> {
        &mut self.params[id.0].value
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    /// Replaces a parameter's value and shape (positional-table resizing).
    pub fn reshape(&mut self, id: ParamId, shape: Vec<usize>, value: Vec<T>) {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let p = &mut self.params[id.0];
        p.shape = shape;
        p.value = value;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Ids whose name starts with any of the given prefixes, in id order.
    pub fn ids_with_prefix(&self, prefixes: &[String]) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| {
                let name = self.name(id);
                prefixes.iter().any(|p| name.starts_with(p.as_str()))
            })
            .collect()
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn grads(&self) -> Grads<T> {
        Grads {
            bufs: self.params.iter().map(|p| vec![T::ZERO; p.value.len()]).collect(),
        }
    }

    /// SHA-256 over (name, shape, f64 value bits) of every parameter whose
    /// name starts with `prefix`, in name order. Empty prefix digests all.
    pub fn group_digest(&self, prefix: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, &i) in &self.by_name {
            if !name.starts_with(prefix) {
                continue;
            }
            let p = &self.params[i];
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for &d in &p.shape {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in &p.value {
                hasher.update(v.to_f64().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    pub fn group_digest_hex(&self, prefix: &str) -> String {
        let d = self.group_digest(prefix);
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Gradient buffers parallel to a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn of(&self, id: ParamId) -> &[T] {
        &self.bufs[id.0]
    }

    pub fn of_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.bufs[id.0]
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    /// self += other (fixed order; used to merge per-sample gradients).
    pub fn accumulate(&mut self, other: &Grads<T>) {
        assert_eq!(self.bufs.len(), other.bufs.len());
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for b in &mut self.bufs {
            for v in b.iter_mut() {
                *v *= alpha;
            }
        }
    }

    /// Global L2 norm over the given parameter ids.
    pub fn global_norm(&self, ids: &[ParamId]) -> f64 {
        let mut s = 0.0;
        for &id in ids {
            for v in &self.bufs[id.0] {
                let x = v.to_f64();
                s += x * x;
            }
        }
        s.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_changes_with_value_and_prefix_filters() {
        let mut rng = Rng::new(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        let a = store.add("alpha.w", &[2, 2], Init::Normal(0.1), &mut rng);
        store.add("beta.w", &[3], Init::Zeros, &mut rng);

        let d_all = store.group_digest("");
        let d_alpha = store.group_digest("alpha");
        let d_beta = store.group_digest("beta");
        assert_ne!(d_alpha, d_beta);

        store.value_mut(a)[0] += 1.0;
        assert_ne!(store.group_digest(""), d_all);
        assert_ne!(store.group_digest("alpha"), d_alpha);
        assert_eq!(store.group_digest("beta"), d_beta);
    }

    #[test]
    fn prefix_selection() {
        let mut rng = Rng::new(1);
        let mut store: ParamStore<f32> = ParamStore::new();
        store.add("mar.enc.w", &[4], Init::Zeros, &mut rng);
        store.add("mar.dec.w", &[4], Init::Zeros, &mut rng);
        store.add("backbone.w", &[4], Init::Zeros, &mut rng);
        let ids = store.ids_with_prefix(&["mar.".to_string()]);
        assert_eq!(ids.len(), 2);
    }
}
