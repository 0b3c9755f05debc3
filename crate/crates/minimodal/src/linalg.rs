//! Row-major dense kernels.
//!
//! Shapes are passed explicitly; callers own all layout decisions. The loop
//! orders are chosen so the inner loop streams contiguous rows and
//! auto-vectorizes. No parallelism here — batching parallelizes one level up,
//! which keeps every kernel bit-deterministic.

use crate::real::Real;

/// C[m,n] = A[m,k] · B[k,n]
pub fn mm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let aval = a[i * k + l];
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                crow[j] += aval * brow[j];
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] · B[n,k]ᵀ  (dot products of rows)
pub fn mm_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *cv = dot(arow, brow);
        }
    }
    c
}

/// C[m,n] = A[k,m]ᵀ · B[k,n]
pub fn mm_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::ZERO; m * n];
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let aval = arow[i];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aval * brow[j];
            }
        }
    }
    c
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::ZERO;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// y += alpha * x
#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for i in 0..y.len() {
        y[i] += alpha * x[i];
    }
}

pub fn add_inplace<T: Real>(y: &mut [T], x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for i in 0..y.len() {
        y[i] += x[i];
    }
}

pub fn scale_inplace<T: Real>(y: &mut [T], alpha: T) {
    for v in y.iter_mut() {
        *v *= alpha;
    }
}

pub fn l2_norm<T: Real>(x: &[T]) -> f64 {
    x.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mm_matches_by_hand() {
        // A = [[1,2],[3,4],[5,6]], B = [[1,0,2],[0,1,3]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 2.0, 0.0, 1.0, 3.0];
        let c = mm::<f64>(&a, &b, 3, 2, 3);
        assert_eq!(c, vec![1.0, 2.0, 8.0, 3.0, 4.0, 18.0, 5.0, 6.0, 28.0]);
    }

    #[test]
    fn transposed_variants_agree_with_mm() {
        let m = 4;
        let k = 5;
        let n = 3;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.37 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.11 + 0.5).collect();
        let c = mm(&a, &b, m, k, n);

        // b_t[n,k] row j = column j of b
        let mut b_t = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                b_t[j * k + l] = b[l * n + j];
            }
        }
        assert_eq!(mm_nt(&a, &b_t, m, k, n), c);

        // a_t[k,m]
        let mut a_t = vec![0.0; k * m];
        for i in 0..m {
            for l in 0..k {
                a_t[l * m + i] = a[i * k + l];
            }
        }
        assert_eq!(mm_tn(&a_t, &b, m, k, n), c);
    }
}
