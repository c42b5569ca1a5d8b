//! Dense helpers on row-major `d × d` slices. Dimensions here are the
//! embedding dimension, so plain loops are adequate.

use std::cmp::Ordering;

use ndarray::ArrayView2;

/// In-place lower Cholesky factor of a symmetric positive-definite matrix.
/// The strict upper triangle is zeroed. Returns `false` if a pivot is not
/// strictly positive.
pub(crate) fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
        for k in (j + 1)..d {
            a[j * d + k] = 0.0;
        }
    }
    true
}

/// log|A| from its lower Cholesky factor.
pub(crate) fn chol_log_det(l: &[f64], d: usize) -> f64 {
    2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>()
}

/// Squared Mahalanobis norm `vᵀ A⁻¹ v` from the lower Cholesky factor of A.
/// `scratch` must hold `d` values.
pub(crate) fn chol_mahalanobis(l: &[f64], d: usize, v: &[f64], scratch: &mut [f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        let row = &l[i * d..i * d + i];
        let mut s = v[i];
        for (lik, zk) in row.iter().zip(scratch.iter()) {
            s -= lik * zk;
        }
        let z = s / l[i * d + i];
        scratch[i] = z;
        acc += z * z;
    }
    acc
}

/// Row-lexicographic total order on f64 bit patterns.
pub(crate) fn cmp_rows(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Permutation that puts the rows into canonical (lexicographic) order.
/// Algorithms that run on the canonical order are exactly invariant to the
/// caller's row order.
pub(crate) fn canonical_row_order(x: ArrayView2<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&i, &j| cmp_rows(x.row(i), x.row(j)));
    order
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_known_factor() {
        // A = L Lᵀ with L = [[2,0],[1,3]]
        let mut a = vec![4.0, 2.0, 2.0, 10.0];
        assert!(cholesky_in_place(&mut a, 2));
        assert_eq!(a, vec![2.0, 0.0, 1.0, 3.0]);
        assert!((chol_log_det(&a, 2) - 36f64.ln()).abs() < 1e-14);
        // A⁻¹ = 1/36 [[10,-2],[-2,4]]; v = (1,1) → (10-4+4)/36
        let mut s = vec![0.0; 2];
        let m = chol_mahalanobis(&a, 2, &[1.0, 1.0], &mut s);
        assert!((m - 10.0 / 36.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut a, 2));
    }
}
