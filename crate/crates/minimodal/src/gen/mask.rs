//! Mask planning for masked-autoregressive training and sampling.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Boolean mask over token positions plus the ratio that produced it.
#[derive(Clone, Debug)]
pub struct MaskPlan {
    pub mask: Vec<bool>,
    pub ratio: f64,
}

impl MaskPlan {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| !m)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Uniformly masks `round(ratio · n)` positions without replacement.
pub fn sample_mask(n_tokens: usize, ratio: f64, rng: &mut Rng) -> MaskPlan {
    assert!((0.0..=1.0).contains(&ratio), "ratio {ratio} outside [0,1]");
    let k = (ratio * n_tokens as f64).round() as usize;
    let mut mask = vec![false; n_tokens];
    for i in rng.choose_k(n_tokens, k.min(n_tokens)) {
        mask[i] = true;
    }
    MaskPlan { mask, ratio }
}

/// Cosine masking schedule: fraction of tokens still masked after k of K
/// outer sampling steps.
pub fn mask_ratio_at(k: usize, steps: usize) -> Result<f64> {
    if k > steps {
        return Err(Error::Input(format!("step {k} exceeds total {steps}")));
    }
    Ok((std::f64::consts::FRAC_PI_2 * k as f64 / steps as f64).cos())
}

/// Number of tokens to commit at each outer step so that every token commits
/// exactly once across all steps.
pub fn commit_counts(n_tokens: usize, steps: usize) -> Vec<usize> {
    assert!(steps >= 1);
    let mut remaining_prev = n_tokens;
    let mut counts = Vec::with_capacity(steps);
    for k in 1..=steps {
        let ratio = mask_ratio_at(k, steps).expect("k <= steps");
        let remaining = (ratio * n_tokens as f64).round() as usize;
        let remaining = remaining.min(remaining_prev);
        counts.push(remaining_prev - remaining);
        remaining_prev = remaining;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_masked_counts() {
        let mut rng = Rng::new(1);
        assert_eq!(sample_mask(16, 0.75, &mut rng).masked_count(), 12);
        assert_eq!(sample_mask(16, 0.0, &mut rng).masked_count(), 0);
        assert_eq!(sample_mask(16, 1.0, &mut rng).masked_count(), 16);
    }

    #[test]
    fn masking_is_uniform_over_positions() {
        let mut rng = Rng::new(2);
        let n = 16;
        let draws = 10_000;
        let mut hits = vec![0usize; n];
        for _ in 0..draws {
            let m = sample_mask(n, 0.5, &mut rng);
            for (i, &b) in m.mask.iter().enumerate() {
                if b {
                    hits[i] += 1;
                }
            }
        }
        for (i, &h) in hits.iter().enumerate() {
            let f = h as f64 / draws as f64;
            assert!((f - 0.5).abs() < 0.02, "position {i} frequency {f}");
        }
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        assert_eq!(mask_ratio_at(0, 64).unwrap(), 1.0);
        assert!(mask_ratio_at(64, 64).unwrap().abs() < 1e-15);
        let mid = mask_ratio_at(32, 64).unwrap();
        assert!((mid - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert!(mask_ratio_at(65, 64).is_err());
    }

    #[test]
    fn schedule_is_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for k in 0..=64 {
            let r = mask_ratio_at(k, 64).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn commit_counts_cover_every_token_once() {
        for steps in [1usize, 8, 64] {
            for n in [1usize, 16, 64, 256] {
                let counts = commit_counts(n, steps);
                assert_eq!(counts.len(), steps);
                assert_eq!(counts.iter().sum::<usize>(), n, "n={n} steps={steps}");
            }
        }
        // K=1 commits everything at once
        assert_eq!(commit_counts(64, 1), vec![64]);
    }
}
