//! Small dense linear-algebra helpers shared by the predictor, the data
//! selection scores and the persistency-of-excitation test.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below `RANK_RTOL * sigma_max` are treated as zero.
pub const RANK_RTOL: f64 = 1e-9;

/// Numerical rank with a cutoff relative to the largest singular value.
pub fn numerical_rank(a: &DMatrix<f64>, rtol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// Moore-Penrose pseudo-inverse through the SVD, truncating singular values
/// below `rtol * sigma_max`.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pseudo-inverse operand"));
    }
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(c, r));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cut = rtol * smax;
    let k = svd.singular_values.len();
    // V * diag(1/s) * U^T, skipping truncated directions.
    let mut scaled_vt = v_t.clone();
    for i in 0..k {
        let s = svd.singular_values[i];
        let inv = if s > cut && s > 0.0 { 1.0 / s } else { 0.0 };
        scaled_vt.row_mut(i).scale_mut(inv);
    }
    Ok(scaled_vt.transpose() * u.transpose())
}

/// Largest absolute entry, 0 for empty inputs.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn vec_max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(a: &DMatrix<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Flattens a time-major `T x d` block into a stacked vector `[row_0; row_1; ...]`.
pub fn stack_rows(a: &DMatrix<f64>) -> DVector<f64> {
    let (t, d) = a.shape();
    DVector::from_fn(t * d, |i, _| a[(i / d, i % d)])
}

/// Inverse of [`stack_rows`].
pub fn unstack_rows(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), rows * cols);
    DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_wide_row_is_min_norm() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = pinv(&a, RANK_RTOL).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((p[(1, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rank_of_repeated_columns() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(numerical_rank(&a, RANK_RTOL), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), RANK_RTOL), 0);
    }

    #[test]
    fn stack_roundtrip() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = stack_rows(&a);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unstack_rows(&v, 2, 3), a);
    }
}
