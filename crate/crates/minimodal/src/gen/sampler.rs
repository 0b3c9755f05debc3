//! Ancestral denoising and classifier-free guidance.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::real::Real;
use crate::rng::Rng;

use super::head::DiffusionHead;
use super::noise::NoiseSchedule;

/// eps_uncond + scale · (eps_cond − eps_uncond)
pub fn cfg_combine<T: Real>(eps_cond: &[T], eps_uncond: &[T], scale: f64) -> Result<Vec<T>> {
    if eps_cond.len() != eps_uncond.len() {
        return Err(Error::Input(format!(
            "cfg_combine shape mismatch: {} vs {}",
            eps_cond.len(),
            eps_uncond.len()
        )));
    }
    let s = T::from_f64(scale);
    Ok(eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(&c, &u)| u + s * (c - u))
        .collect())
}

/// Predicted-x0 clamp used inside the chain; keeps guided extrapolation from
/// running away at high noise levels.
pub const X0_CLAMP: f64 = 1.5;

/// Full ancestral chain x_T → x̂_0 for one token, with the noise predictor
/// supplied as a closure (analytic oracles plug in here).
pub fn denoise_chain<T: Real>(
    dim: usize,
    schedule: &NoiseSchedule,
    eps_fn: impl Fn(&[T], usize) -> Vec<T>,
    rng: &mut Rng,
    clamp_x0: Option<f64>,
) -> Vec<T> {
    let tt = schedule.timesteps;
    let mut x: Vec<T> = rng.normal_vec(dim);
    for t in (1..=tt).rev() {
        let eps = eps_fn(&x, t);
        let ab = schedule.alpha_bar[t];
        let ab_prev = schedule.alpha_bar[t - 1];
        let beta = schedule.betas[t];
        let alpha = 1.0 - beta;
        // predicted clean token
        let mut x0: Vec<f64> = x
            .iter()
            .zip(&eps)
            .map(|(&xv, &ev)| (xv.to_f64() - (1.0 - ab).sqrt() * ev.to_f64()) / ab.sqrt())
            .collect();
        if let Some(c) = clamp_x0 {
            for v in &mut x0 {
                *v = v.clamp(-c, c);
            }
        }
        // posterior mean q(x_{t-1} | x_t, x0)
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let c1 = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        for i in 0..dim {
            let mu = c0 * x0[i] + c1 * x[i].to_f64();
            let next = if t > 1 {
                mu + var.sqrt() * rng.normal()
            } else {
                mu
            };
            x[i] = T::from_f64(next);
        }
    }
    x
}

/// Denoises one token under its condition vector, optionally with
/// classifier-free guidance against an unconditional z.
pub fn denoise_sample<T: Real>(
    head: &DiffusionHead,
    store: &ParamStore<T>,
    schedule: &NoiseSchedule,
    z_cond: &[T],
    z_uncond: Option<&[T]>,
    cfg_scale: f64,
    rng: &mut Rng,
) -> Vec<T> {
    denoise_chain(
        head.token_dim,
        schedule,
        |x_t, t| {
            let (eps_c, _) = head.forward(store, x_t, &[t], z_cond);
            match z_uncond {
                Some(zu) => {
                    let (eps_u, _) = head.forward(store, x_t, &[t], zu);
                    cfg_combine(&eps_c, &eps_u, cfg_scale).expect("same shapes")
                }
                None => eps_c,
            }
        },
        rng,
        Some(X0_CLAMP),
    )
}
