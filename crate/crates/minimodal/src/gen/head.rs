//! Per-token diffusion head: a small MLP predicting the drawn noise from the
//! noised token, a sinusoidal timestep embedding and the per-token condition
//! vector z.

use serde::{Deserialize, Serialize};

use crate::nn::linear::LinearCache;
use crate::nn::ops::{mse, silu, silu_grad, sinusoidal_embedding};
use crate::nn::{Grads, Linear, ParamStore};
use crate::real::Real;
use crate::rng::Rng;

use super::noise::{make_noisy, BetaSchedule, NoiseSchedule};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionHeadConfig {
    pub timesteps: usize,
    pub beta_schedule: BetaSchedule,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub mlp_depth: usize,
    pub mlp_width: usize,
    pub time_embed_dim: usize,
}

impl Default for DiffusionHeadConfig {
    fn default() -> Self {
        DiffusionHeadConfig {
            timesteps: 100,
            beta_schedule: BetaSchedule::Linear,
            beta_lo: 1e-3,
            beta_hi: 0.2,
            mlp_depth: 3,
            mlp_width: 256,
            time_embed_dim: 32,
        }
    }
}

pub struct DiffusionHead {
    pub layers: Vec<Linear>,
    pub token_dim: usize,
    pub z_dim: usize,
    pub cfg: DiffusionHeadConfig,
}

pub struct HeadCache<T> {
    layer_caches: Vec<LinearCache<T>>,
    pre_acts: Vec<Vec<T>>,
    rows: usize,
}

impl DiffusionHead {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        token_dim: usize,
        z_dim: usize,
        cfg: DiffusionHeadConfig,
        rng: &mut Rng,
    ) -> Self {
        assert!(cfg.mlp_depth >= 2);
        let in_dim = token_dim + cfg.time_embed_dim + z_dim;
        let mut layers = Vec::new();
        let mut d = in_dim;
        for i in 0..cfg.mlp_depth - 1 {
            layers.push(Linear::new(
                store,
                &format!("diff_head.fc{i}"),
                d,
                cfg.mlp_width,
                rng,
            ));
            d = cfg.mlp_width;
        }
        layers.push(Linear::new(
            store,
            &format!("diff_head.fc{}", cfg.mlp_depth - 1),
            d,
            token_dim,
            rng,
        ));
        DiffusionHead {
            layers,
            token_dim,
            z_dim,
            cfg,
        }
    }

    fn assemble_input<T: Real>(&self, x_t: &[T], ts: &[usize], z: &[T]) -> Vec<T> {
        let rows = ts.len();
        let d_in = self.token_dim + self.cfg.time_embed_dim + self.z_dim;
        let mut input = Vec::with_capacity(rows * d_in);
        for r in 0..rows {
            input.extend_from_slice(&x_t[r * self.token_dim..(r + 1) * self.token_dim]);
            let temb = sinusoidal_embedding::<T>(
                ts[r] as f64 / self.cfg.timesteps as f64,
                self.cfg.time_embed_dim,
            );
            input.extend_from_slice(&temb);
            input.extend_from_slice(&z[r * self.z_dim..(r + 1) * self.z_dim]);
        }
        input
    }

    /// Predicts ε for a batch of rows: x_t [rows, token_dim], per-row
    /// timesteps, z [rows, z_dim].
    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        x_t: &[T],
        ts: &[usize],
        z: &[T],
    ) -> (Vec<T>, HeadCache<T>) {
        let rows = ts.len();
        let mut x = self.assemble_input(x_t, ts, z);
        let mut layer_caches = Vec::new();
        let mut pre_acts = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let (y, c) = l.forward(store, &x);
            layer_caches.push(c);
            if i + 1 < self.layers.len() {
                pre_acts.push(y.clone());
                x = y.into_iter().map(silu).collect();
            } else {
                x = y;
            }
        }
        (
            x,
            HeadCache {
                layer_caches,
                pre_acts,
                rows,
            },
        )
    }

    /// Backward; returns gradient w.r.t. z (the conditioning path).
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &HeadCache<T>,
        d_eps: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let mut dy = d_eps.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                let pre = &cache.pre_acts[i];
                for (d, &p) in dy.iter_mut().zip(pre) {
                    *d *= silu_grad(p);
                }
            }
            dy = self.layers[i].backward(store, &cache.layer_caches[i], &dy, grads);
        }
        // dy is now the gradient of the assembled input; slice out z part
        let d_in = self.token_dim + self.cfg.time_embed_dim + self.z_dim;
        let mut dz = vec![T::ZERO; cache.rows * self.z_dim];
        for r in 0..cache.rows {
            let off = r * d_in + self.token_dim + self.cfg.time_embed_dim;
            dz[r * self.z_dim..(r + 1) * self.z_dim].copy_from_slice(&dy[off..off + self.z_dim]);
        }
        dz
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::new(
            self.cfg.beta_schedule,
            self.cfg.timesteps,
            self.cfg.beta_lo,
            self.cfg.beta_hi,
        )
    }
}

/// One diffusion-loss evaluation over a batch of masked tokens.
///
/// For each row draws t ~ U{1..T} and ε ~ N(0, I), noises the clean token,
/// predicts ε and returns the mean-squared error (mean over rows and
/// dimensions), plus everything needed for the backward pass.
pub struct DiffusionLossOutput<T> {
    pub loss: T,
    pub d_eps_pred: Vec<T>,
    pub cache: HeadCache<T>,
}

pub fn diffusion_loss<T: Real>(
    head: &DiffusionHead,
    store: &ParamStore<T>,
    schedule: &NoiseSchedule,
    z: &[T],
    x0: &[T],
    rng: &mut Rng,
) -> DiffusionLossOutput<T> {
    let rows = x0.len() / head.token_dim;
    debug_assert_eq!(z.len(), rows * head.z_dim);
    let mut ts = Vec::with_capacity(rows);
    let mut x_t = Vec::with_capacity(x0.len());
    let mut eps = Vec::with_capacity(x0.len());
    for r in 0..rows {
        let t = 1 + rng.below(schedule.timesteps);
        let ns = make_noisy(
            schedule,
            &x0[r * head.token_dim..(r + 1) * head.token_dim],
            t,
            rng,
        );
        ts.push(t);
        x_t.extend_from_slice(&ns.x_t);
        eps.extend_from_slice(&ns.eps);
    }
    let (eps_pred, cache) = head.forward(store, &x_t, &ts, z);
    let (loss, d_eps_pred) = mse(&eps_pred, &eps);
    DiffusionLossOutput {
        loss,
        d_eps_pred,
        cache,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::nn::{Init, ParamId};

    #[test]
    fn zero_prediction_loss_near_one() {
        // untrained head ≈ small outputs; ε ~ N(0,1) ⇒ mse ≈ 1 under the
        // mean convention
        let mut rng = Rng::new(2);
        let mut store: ParamStore<f64> = ParamStore::new();
        let cfg = DiffusionHeadConfig {
            mlp_width: 16,
            ..Default::default()
        };
        let head = DiffusionHead::new(&mut store, 4, 8, cfg, &mut rng);
        let schedule = head.schedule();
        let rows = 512;
        let z = vec![0.0; rows * 8];
        let x0 = vec![0.0; rows * 4];
        let out = diffusion_loss(&head, &store, &schedule, &z, &x0, &mut rng);
        assert!((out.loss - 1.0).abs() < 0.15, "loss {}", out.loss);
    }

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        // mse(ε, ε) = 0 by the formula
        let (loss, _) = mse(&[0.3f64, -0.2, 1.4], &[0.3, -0.2, 1.4]);
        assert_eq!(loss, 0.0);
    }

    /// Three-parameter toy head ε̂ = a·x_t + b·sin(t/T) + c·z̄ checked against
    /// central finite differences (independent oracle in test code).
    #[test]
    fn toy_head_gradient_matches_finite_differences() {
        let schedule = NoiseSchedule::new(BetaSchedule::Linear, 50, 1e-3, 0.2);
        let dim = 3;
        let mut rng = Rng::new(5);
        let x0: Vec<f64> = rng.normal_vec(dim);
        let z: Vec<f64> = rng.normal_vec(dim);
        let t = 17usize;
        let ns = make_noisy(&schedule, &x0, t, &mut rng);

        let loss_of = |p: &[f64]| -> f64 {
            let (a, b, c) = (p[0], p[1], p[2]);
            let zbar: f64 = z.iter().sum::<f64>() / dim as f64;
            let mut s = 0.0;
            for i in 0..dim {
                let pred = a * ns.x_t[i] + b * (t as f64 / 50.0).sin() + c * zbar;
                let d = pred - ns.eps[i];
                s += d * d;
            }
            s / dim as f64
        };

        // analytic gradient
        let p = [0.7, -0.3, 0.25];
        let zbar: f64 = z.iter().sum::<f64>() / dim as f64;
        let mut grad = [0.0f64; 3];
        for i in 0..dim {
            let pred = p[0] * ns.x_t[i] + p[1] * (t as f64 / 50.0).sin() + p[2] * zbar;
            let d = 2.0 * (pred - ns.eps[i]) / dim as f64;
            grad[0] += d * ns.x_t[i];
            grad[1] += d * (t as f64 / 50.0).sin();
            grad[2] += d * zbar;
        }

        for k in 0..3 {
            let h = 1e-6;
            let mut pp = p;
            pp[k] += h;
            let lp = loss_of(&pp);
            pp[k] -= 2.0 * h;
            let lm = loss_of(&pp);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / (grad[k].abs() + fd.abs()).max(1e-9);
            assert!(rel < 1e-3, "param {k}: analytic {} fd {fd}", grad[k]);
        }
    }

    /// Full finite-difference check of the production head through the
    /// diffusion loss, including the z path.
    #[test]
    fn production_head_gradients_match_finite_differences() {
        let mut rng = Rng::new(9);
        let mut store: ParamStore<f64> = ParamStore::new();
        let cfg = DiffusionHeadConfig {
            timesteps: 20,
            mlp_depth: 3,
            mlp_width: 12,
            time_embed_dim: 8,
            ..Default::default()
        };
        let head = DiffusionHead::new(&mut store, 4, 6, cfg, &mut rng);
        let schedule = head.schedule();
        let z_id = store.add("z_input", &[3, 6], Init::Normal(0.5), &mut rng);
        let x0: Vec<f64> = Rng::new(31).normal_vec(3 * 4);

        let loss_fn = |s: &ParamStore<f64>| {
            let mut r = Rng::new(77);
            diffusion_loss(&head, s, &schedule, s.value(z_id), &x0, &mut r)
                .loss
        };

        let mut grads = store.grads();
        {
            let mut r = Rng::new(77);
            let out = diffusion_loss(&head, &store, &schedule, store.value(z_id), &x0, &mut r);
            let dz = head.backward(&store, &out.cache, &out.d_eps_pred, &mut grads);
            let g = grads.of_mut(z_id);
            for (gv, d) in g.iter_mut().zip(&dz) {
                *gv += *d;
            }
        }

        let ids: Vec<ParamId> = store.ids().collect();
        let mut crng = Rng::new(123);
        let report = check_gradients(&mut store, &ids, &grads, loss_fn, 1e-5, 8, &mut crng);
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
