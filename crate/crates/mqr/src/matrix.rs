//! Dense matrix primitives: SVD, spectral norm, and the nuclear-norm
//! proximity operator (singular value thresholding).

use ndarray::Array2;
use ndarray_linalg::{JobSvd, SVDDC};

use crate::error::{Error, Result};

/// Dense real matrix, the universal carrier for designs, responses and
/// coefficient matrices. Row-major storage.
pub type Matrix = Array2<f64>;

/// Singular values below `RANK_EPS * sigma_max` count as exact zeros when
/// reporting rank (floating-point noise floor).
pub const RANK_EPS: f64 = 1e-12;

/// Thin singular value decomposition `A = U diag(sigma) V^T`.
///
/// `u` is rows×k and `v` is cols×k with orthonormal columns,
/// `singular_values` is nonincreasing and nonnegative, k = min(rows, cols).
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// Reconstruct `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let mut scaled = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate().take(k) {
            scaled.column_mut(j).mapv_inplace(|x| x * s);
        }
        scaled.dot(&self.v.t())
    }

    /// Number of singular values above `RANK_EPS * sigma_max`.
    pub fn numerical_rank(&self) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > RANK_EPS * smax)
            .count()
    }
}

pub(crate) fn ensure_finite(a: &Matrix, context: &'static str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Thin SVD with singular values sorted in nonincreasing order.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    ensure_finite(a, "svd input")?;
    let (u, s, vt) = a
        .svddc(JobSvd::Some)
        .map_err(|_| Error::NonConvergence {
            rows: a.nrows(),
            cols: a.ncols(),
        })?;
    Ok(SvdResult {
        u: u.expect("economy U requested"),
        singular_values: s.to_vec(),
        v: vt.expect("economy V^T requested").t().to_owned(),
    })
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    ensure_finite(a, "spectral_norm input")?;
    let (_, s, _) = a
        .svddc(JobSvd::None)
        .map_err(|_| Error::NonConvergence {
            rows: a.nrows(),
            cols: a.ncols(),
        })?;
    Ok(s.iter().fold(0.0f64, |acc, &v| acc.max(v)))
}

/// Frobenius norm.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(svd(a)?.singular_values.iter().sum())
}

/// Proximity operator of `threshold * ||.||_*`: soft-thresholds the
/// singular values, `U (D - threshold I)_+ V^T`.
pub fn singular_value_threshold(y: &Matrix, threshold: f64) -> Result<Matrix> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must be nonnegative, got {threshold}"
        )));
    }
    let (out, _) = svt_with_values(y, threshold)?;
    Ok(out)
}

/// Singular value thresholding that also returns the thresholded singular
/// values, i.e. the singular values of the output.
pub(crate) fn svt_with_values(y: &Matrix, threshold: f64) -> Result<(Matrix, Vec<f64>)> {
    let decomp = svd(y)?;
    let kept: Vec<f64> = decomp
        .singular_values
        .iter()
        .map(|&s| (s - threshold).max(0.0))
        .collect();
    let mut scaled = decomp.u;
    for (j, s) in kept.iter().enumerate() {
        scaled.column_mut(j).mapv_inplace(|x| x * s);
    }
    Ok((scaled.dot(&decomp.v.t()), kept))
}
