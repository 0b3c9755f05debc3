//! Central finite differences over a [`ParamStore`].
//!
//! The independent oracle for every gradient in the crate: perturb one
//! coordinate, evaluate the loss twice, compare the quotient against the
//! analytic gradient. Meant to run at `f64` where the quotient is reliable.

use crate::real::Real;
use crate::rng::Rng;

use super::param::{Grads, ParamId, ParamStore};

pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares analytic gradients against central finite differences on up to
/// `max_coords_per_param` coordinates per parameter (all if 0).
///
/// Relative error uses |a - f| / max(|a| + |f|, 1e-6); coordinates where both
/// sides are below 1e-10 in magnitude count as exact.
pub fn check_gradients<T, F>(
    store: &mut ParamStore<T>,
    ids: &[ParamId],
    analytic: &Grads<T>,
    mut loss_fn: F,
    step: f64,
    max_coords_per_param: usize,
    rng: &mut Rng,
) -> GradCheckReport
where
    T: Real,
    F: FnMut(&ParamStore<T>) -> f64,
{
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0usize;

    for &id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if max_coords_per_param == 0 || n <= max_coords_per_param {
            (0..n).collect()
        } else {
            rng.choose_k(n, max_coords_per_param)
        };
        for c in coords {
            let orig = store.value(id)[c];
            let h = T::from_f64(step);
            store.value_mut(id)[c] = orig + h;
            let lp = loss_fn(store);
            store.value_mut(id)[c] = orig - h;
            let lm = loss_fn(store);
            store.value_mut(id)[c] = orig;

            let fd = (lp - lm) / (2.0 * step);
            let an = analytic.of(id)[c].to_f64();
            checked += 1;
            if an.abs() < 1e-10 && fd.abs() < 1e-10 {
                continue;
            }
            let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
                worst = Some((store.name(id).to_string(), c, an, fd));
            }
        }
    }

    GradCheckReport {
        checked,
        max_rel_err: max_rel,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, TransformerBlock};
    use crate::nn::ops::mse;

    /// Full finite-difference check of a two-block transformer with a mixed
    /// causal/bidirectional mask — exercises every layer's backward at once.
    #[test]
    fn transformer_block_gradients_match_finite_differences() {
        let dim = 8;
        let heads = 2;
        let len = 5;
        let mut rng = Rng::new(42);
        let mut store: ParamStore<f64> = ParamStore::new();
        let b0 = TransformerBlock::new(&mut store, "b0", dim, heads, 2, &mut rng);
        let b1 = TransformerBlock::new(&mut store, "b1", dim, heads, 2, &mut rng);
        let x0 = store.add("input", &[len, dim], Init::Normal(0.5), &mut rng);

        // first 3 positions causal, last 2 bidirectional among themselves
        let mut mask = vec![false; len * len];
        for q in 0..len {
            for k in 0..len {
                let allowed = if q < 3 { k <= q } else { k >= 3 || k < 3 };
                mask[q * len + k] = allowed;
            }
        }
        let target: Vec<f64> = (0..len * dim).map(|i| (i as f64 * 0.1).sin()).collect();

        let loss_only = |store: &ParamStore<f64>| -> f64 {
            let x = store.value(x0).to_vec();
            let (h0, _) = b0.forward(store, &x, &mask);
            let (h1, _) = b1.forward(store, &h0, &mask);
            mse(&h1, &target).0
        };

        // analytic gradients
        let mut grads = store.grads();
        {
            let x = store.value(x0).to_vec();
            let (h0, c0) = b0.forward(&store, &x, &mask);
            let (h1, c1) = b1.forward(&store, &h0, &mask);
            let (_, dl) = mse(&h1, &target);
            let dh0 = b1.backward(&store, &c1, &dl, &mut grads);
            let dx = b0.backward(&store, &c0, &dh0, &mut grads);
            let gx = grads.of_mut(x0);
            for (g, d) in gx.iter_mut().zip(&dx) {
                *g += *d;
            }
        }

        let ids: Vec<ParamId> = store.ids().collect();
        let mut check_rng = Rng::new(7);
        let report =
            check_gradients(&mut store, &ids, &grads, loss_only, 1e-5, 6, &mut check_rng);
        assert!(
            report.max_rel_err < 1e-5,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
