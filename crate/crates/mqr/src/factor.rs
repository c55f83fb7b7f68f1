//! Factor extraction from a fitted coefficient matrix.
//!
//! The SVD `G = U diag(sigma) V'` factorises the quantile surface: factor
//! `k` evaluates as `f_k(x) = sigma_k U_{*k}' x`, response `j` loads on it
//! with weight `V_{jk}`, so `q_j(tau | x) = sum_k V_{jk} f_k(x)`. The
//! detected rank is where the singular value sequence drops sharply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, Matrix, RANK_EPS};
use crate::persist::matrix_serde;

/// Fraction of the top singular value used as the default drop threshold.
pub const DEFAULT_DROP_FRAC: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorModel {
    /// Nonincreasing singular values, all min(p, m) of them.
    pub singular_values: Vec<f64>,
    /// Left singular vectors, p x k; column k scaled by sigma_k gives the
    /// covariate weights of factor k.
    #[serde(with = "matrix_serde")]
    pub left_vectors: Matrix,
    /// Right singular vectors, m x k; row j holds the factor loadings of
    /// response j.
    #[serde(with = "matrix_serde")]
    pub loadings: Matrix,
    /// Detected number of factors.
    pub rank: usize,
}

/// Rank rule: the first gap `sigma_k - sigma_{k+1}` exceeding the threshold
/// (with `sigma` past min(p, m) read as zero) sets the rank; without such a
/// gap, count singular values above the numerical noise floor.
fn detect_rank(singular_values: &[f64], drop_threshold: f64) -> usize {
    let k = singular_values.len();
    for i in 0..k {
        let next = if i + 1 < k { singular_values[i + 1] } else { 0.0 };
        if singular_values[i] - next > drop_threshold {
            return i + 1;
        }
    }
    let smax = singular_values.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s > RANK_EPS * smax)
        .count()
}

/// SVD of the coefficient matrix with a deterministic sign convention and
/// the drop rule applied at `drop_threshold`.
///
/// Sign convention: each left singular vector is flipped so its
/// largest-magnitude entry is positive, with the matching flip applied to
/// the loadings.
pub fn factorize(gamma_hat: &Matrix, drop_threshold: f64) -> Result<FactorModel> {
    if !(drop_threshold > 0.0 && drop_threshold.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "drop threshold must be positive, got {drop_threshold}"
        )));
    }
    let decomp = matrix::svd(gamma_hat)?;
    let mut u = decomp.u;
    let mut v = decomp.v;
    for k in 0..decomp.singular_values.len() {
        let col = u.column(k);
        let mut arg = 0;
        let mut best = -1.0;
        for (i, &val) in col.iter().enumerate() {
            if val.abs() > best {
                best = val.abs();
                arg = i;
            }
        }
        if u[[arg, k]] < 0.0 {
            u.column_mut(k).mapv_inplace(|x| -x);
            v.column_mut(k).mapv_inplace(|x| -x);
        }
    }
    let rank = detect_rank(&decomp.singular_values, drop_threshold);
    Ok(FactorModel {
        singular_values: decomp.singular_values,
        left_vectors: u,
        loadings: v,
        rank,
    })
}

/// [`factorize`] with the threshold set to `DEFAULT_DROP_FRAC` of the top
/// singular value; a zero matrix yields rank 0.
pub fn factorize_default(gamma_hat: &Matrix) -> Result<FactorModel> {
    let top = matrix::spectral_norm(gamma_hat)?;
    if top <= 0.0 {
        let decomp = matrix::svd(gamma_hat)?;
        return Ok(FactorModel {
            singular_values: decomp.singular_values,
            left_vectors: decomp.u,
            loadings: decomp.v,
            rank: 0,
        });
    }
    factorize(gamma_hat, DEFAULT_DROP_FRAC * top)
}

impl FactorModel {
    /// Reconstruct the coefficient matrix from all retained triplets.
    pub fn reconstruct_gamma(&self) -> Matrix {
        let mut scaled = self.left_vectors.clone();
        for (k, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(k).mapv_inplace(|x| x * s);
        }
        scaled.dot(&self.loadings.t())
    }

    /// Factor scores `F_{ik} = sigma_k U_{*k}' X_i` for the detected rank,
    /// n x rank.
    pub fn factor_scores(&self, x: &Matrix) -> Result<Matrix> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig(
                "factor scores need at least one detected factor".into(),
            ));
        }
        if x.ncols() != self.left_vectors.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} columns, factors expect {}",
                x.ncols(),
                self.left_vectors.nrows()
            )));
        }
        let u_r = self.left_vectors.slice(ndarray::s![.., ..self.rank]);
        let mut scores = x.dot(&u_r);
        for k in 0..self.rank {
            let s = self.singular_values[k];
            scores.column_mut(k).mapv_inplace(|v| v * s);
        }
        Ok(scores)
    }

    /// Per-covariate derivative of factor `k` (zero-based): `sigma_k U_{*k}`.
    pub fn contribution(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.rank {
            return Err(Error::IndexOutOfRange {
                index: k,
                bound: self.rank,
            });
        }
        let s = self.singular_values[k];
        Ok(self.left_vectors.column(k).iter().map(|&v| s * v).collect())
    }

    /// Sensitivities `dq_j / df_k = V_{jk}`: the first `rank` loading
    /// columns, m x rank.
    pub fn sensitivity(&self) -> Matrix {
        self.loadings.slice(ndarray::s![.., ..self.rank]).to_owned()
    }
}
