//! Elementwise activations, softmax and loss primitives.

use crate::real::Real;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// d silu(x) / dx = s(x) * (1 + x * (1 - s(x)))
#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::ONE + x * (T::ONE - s))
}

/// In-place softmax over a row; entries where `keep` is false are treated as
/// -inf (zero probability). At least one entry must be kept.
pub fn masked_softmax_row<T: Real>(row: &mut [T], keep: &[bool]) {
    debug_assert_eq!(row.len(), keep.len());
    let mut maxv: Option<T> = None;
    for (v, &k) in row.iter().zip(keep) {
        if k && maxv.map_or(true, |m| *v > m) {
            maxv = Some(*v);
        }
    }
    let maxv = maxv.expect("softmax row with no allowed entries");
    let mut sum = T::ZERO;
    for (v, &k) in row.iter_mut().zip(keep) {
        if k {
            *v = (*v - maxv).exp();
            sum += *v;
        } else {
            *v = T::ZERO;
        }
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Plain softmax over a slice, returning a new vector.
pub fn softmax<T: Real>(row: &[T]) -> Vec<T> {
    let mut out = row.to_vec();
    let keep = vec![true; row.len()];
    masked_softmax_row(&mut out, &keep);
    out
}

/// Numerically stable log(sum(exp(row))).
pub fn logsumexp<T: Real>(row: &[T]) -> T {
    let maxv = row.iter().fold(row[0], |m, &v| m.maxv(v));
    let mut s = T::ZERO;
    for &v in row {
        s += (v - maxv).exp();
    }
    maxv + s.ln()
}

/// Mean negative log-likelihood of `targets` under rows of `logits` [n, c].
/// Returns (loss, dlogits) with dlogits already divided by n.
pub fn cross_entropy<T: Real>(logits: &[T], c: usize, targets: &[usize]) -> (T, Vec<T>) {
    let n = targets.len();
    debug_assert_eq!(logits.len(), n * c);
    assert!(n > 0, "cross_entropy over zero positions");
    let mut loss = T::ZERO;
    let mut dlogits = vec![T::ZERO; n * c];
    let inv_n = T::ONE / T::from_f64(n as f64);
    for (i, &t) in targets.iter().enumerate() {
        debug_assert!(t < c);
        let row = &logits[i * c..(i + 1) * c];
        let lse = logsumexp(row);
        loss += lse - row[t];
        let drow = &mut dlogits[i * c..(i + 1) * c];
        for j in 0..c {
            let p = (row[j] - lse).exp();
            drow[j] = p * inv_n;
        }
        drow[t] -= inv_n;
    }
    (loss * inv_n, dlogits)
}

/// Mean squared error over all entries. Returns (loss, dpred).
pub fn mse<T: Real>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len();
    assert!(n > 0);
    let inv_n = T::ONE / T::from_f64(n as f64);
    let mut loss = T::ZERO;
    let mut grad = vec![T::ZERO; n];
    for i in 0..n {
        let d = pred[i] - target[i];
        loss += d * d;
        grad[i] = (d + d) * inv_n;
    }
    (loss * inv_n, grad)
}

/// Sinusoidal embedding of a scalar in [0, 1] into `dim` features.
pub fn sinusoidal_embedding<T: Real>(pos01: f64, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::ZERO; dim];
    for i in 0..half {
        let freq = (10_000.0f64).powf(-(i as f64) / half.max(1) as f64);
        let angle = pos01 * freq * 1_000.0;
        out[2 * i] = T::from_f64(angle.sin());
        out[2 * i + 1] = T::from_f64(angle.cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_masks_and_normalizes() {
        let mut row = vec![1.0f64, 100.0, 1.0, 2.0];
        let keep = vec![true, false, true, true];
        masked_softmax_row(&mut row, &keep);
        assert_eq!(row[1], 0.0);
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(row[3] > row[0]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let logits = vec![0.25f64; 4];
        let (loss, _) = cross_entropy(&logits, 4, &[2]);
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_one_hot_prediction_loss_is_zero() {
        let mut logits = vec![-1e4f64; 5];
        logits[3] = 1e4;
        let (loss, _) = cross_entropy(&logits, 5, &[3]);
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn mse_of_equal_inputs_is_zero() {
        let a = vec![0.3f64, -0.7, 2.0];
        let (loss, grad) = mse(&a, &a);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}
