//! Forward diffusion process: beta schedule, cumulative signal levels, and
//! the exact noising identity x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε.

use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    Linear,
    Cosine,
}

/// Precomputed β_t and ᾱ_t for t = 1..=T (index 0 unused).
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub timesteps: usize,
    pub betas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(schedule: BetaSchedule, timesteps: usize, beta_lo: f64, beta_hi: f64) -> Self {
        assert!(timesteps >= 1);
        let mut betas = vec![0.0; timesteps + 1];
        match schedule {
            BetaSchedule::Linear => {
                for t in 1..=timesteps {
                    let f = if timesteps == 1 {
                        0.0
                    } else {
                        (t - 1) as f64 / (timesteps - 1) as f64
                    };
                    betas[t] = beta_lo + (beta_hi - beta_lo) * f;
                }
            }
            BetaSchedule::Cosine => {
                // ᾱ(t) ∝ cos²(π/2 · (t/T + s)/(1 + s))
                let s = 0.008;
                let f = |t: f64| {
                    let x = (t / timesteps as f64 + s) / (1.0 + s);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                let f0 = f(0.0);
                let mut prev = 1.0;
                for t in 1..=timesteps {
                    let ab = (f(t as f64) / f0).clamp(1e-8, 1.0);
                    betas[t] = (1.0 - ab / prev).clamp(1e-8, 0.999);
                    prev = ab;
                }
            }
        }
        let mut alpha_bar = vec![1.0; timesteps + 1];
        for t in 1..=timesteps {
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - betas[t]);
        }
        NoiseSchedule {
            timesteps,
            betas,
            alpha_bar,
        }
    }

    /// 0 < β_1 < … < β_T < 1 and ᾱ strictly decreasing.
    pub fn validate(&self) -> bool {
        let inc = self.betas[1..].windows(2).all(|w| w[0] < w[1]);
        let in_range = self.betas[1..].iter().all(|&b| b > 0.0 && b < 1.0);
        let dec = self.alpha_bar[..=self.timesteps]
            .windows(2)
            .all(|w| w[1] < w[0]);
        inc && in_range && dec
    }
}

/// A noised token with everything needed to reconstruct it exactly.
#[derive(Clone, Debug)]
pub struct NoisySample<T> {
    pub x_t: Vec<T>,
    pub t: usize,
    pub eps: Vec<T>,
}

/// Applies the noising identity at timestep t.
pub fn make_noisy<T: Real>(
    schedule: &NoiseSchedule,
    x0: &[T],
    t: usize,
    rng: &mut Rng,
) -> NoisySample<T> {
    debug_assert!(t >= 1 && t <= schedule.timesteps);
    let ab = schedule.alpha_bar[t];
    let sa = T::from_f64(ab.sqrt());
    let sn = T::from_f64((1.0 - ab).sqrt());
    let eps: Vec<T> = rng.normal_vec(x0.len());
    let x_t: Vec<T> = x0
        .iter()
        .zip(&eps)
        .map(|(&x, &e)| sa * x + sn * e)
        .collect();
    NoisySample { x_t, t, eps }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_monotone_and_in_range() {
        let s = NoiseSchedule::new(BetaSchedule::Linear, 100, 1e-3, 0.2);
        assert!(s.validate());
        assert!(s.alpha_bar[100] < 1e-3, "terminal ᾱ {}", s.alpha_bar[100]);
    }

    #[test]
    fn cosine_schedule_monotone() {
        let s = NoiseSchedule::new(BetaSchedule::Cosine, 100, 0.0, 0.0);
        assert!(s.alpha_bar[..=100].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn noising_identity_holds_exactly() {
        let s = NoiseSchedule::new(BetaSchedule::Linear, 50, 1e-3, 0.2);
        let mut rng = Rng::new(8);
        let x0: Vec<f64> = rng.normal_vec(12);
        for t in [1usize, 25, 50] {
            let ns = make_noisy(&s, &x0, t, &mut rng);
            let ab = s.alpha_bar[t];
            for i in 0..12 {
                let expect = ab.sqrt() * x0[i] + (1.0 - ab).sqrt() * ns.eps[i];
                assert_eq!(ns.x_t[i], expect);
            }
        }
    }

    #[test]
    fn single_step_schedule_works() {
        let s = NoiseSchedule::new(BetaSchedule::Linear, 1, 1e-3, 0.2);
        assert_eq!(s.betas.len(), 2);
        assert!(s.alpha_bar[1] < 1.0);
    }
}
