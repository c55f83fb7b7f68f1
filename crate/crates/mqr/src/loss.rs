//! Check loss, its empirical multivariate form, componentwise clipping,
//! and the Nesterov-smoothed loss with its closed-form gradient.
//!
//! The empirical loss `(mn)^-1 sum_ij rho_tau(Y_ij - X_i' G_*j)` has a dual
//! max-form over variables `Theta_ij in [tau-1, tau]`. Regularizing that
//! maximization with `-(kappa/2) ||Theta||_F^2` makes the optimum unique,
//!
//! ```text
//! Theta*(G) = clip_tau( (kappa m n)^-1 (Y - X G) ),
//! ```
//!
//! and yields a convex, continuously differentiable surrogate whose gradient
//! `-(mn)^-1 X' Theta*(G)` is Lipschitz with constant
//! `||X||^2 / (kappa m^2 n^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Quantile level `tau`, restricted to the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidConfig(format!(
                "quantile level must lie in (0, 1), got {tau}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `tau max (1 - tau)`, the factor entering the smoothing error bound.
    #[inline]
    pub fn max_side(self) -> f64 {
        self.0.max(1.0 - self.0)
    }
}

/// Check loss `rho_tau(u) = u (tau - 1{u <= 0})`.
#[inline]
pub fn check_loss(u: f64, tau: QuantileLevel) -> f64 {
    let indicator = if u <= 0.0 { 1.0 } else { 0.0 };
    u * (tau.value() - indicator)
}

pub(crate) fn check_dims(gamma: &Matrix, x: &Matrix, y: &Matrix) -> Result<()> {
    let (n, p) = (x.nrows(), x.ncols());
    let (ny, m) = (y.nrows(), y.ncols());
    if ny != n || gamma.nrows() != p || gamma.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "X is {n}x{p}, Y is {ny}x{m}, coefficient matrix is {}x{}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    Ok(())
}

/// Empirical multivariate check loss `(mn)^-1 sum_ij rho_tau(Y_ij - X_i' G_*j)`.
pub fn empirical_loss(gamma: &Matrix, x: &Matrix, y: &Matrix, tau: QuantileLevel) -> Result<f64> {
    check_dims(gamma, x, y)?;
    let resid = y - &x.dot(gamma);
    let (n, m) = (x.nrows(), y.ncols());
    let total: f64 = resid.iter().map(|&u| check_loss(u, tau)).sum();
    Ok(total / (m * n) as f64)
}

/// Componentwise projection onto `[tau - 1, tau]`.
pub fn clip_to_tau_interval(a: &Matrix, tau: QuantileLevel) -> Matrix {
    let lo = tau.value() - 1.0;
    let hi = tau.value();
    a.mapv(|v| v.clamp(lo, hi))
}

/// Optimal dual variables `Theta*(G)` of the smoothed loss.
pub fn optimal_dual(
    gamma: &Matrix,
    x: &Matrix,
    y: &Matrix,
    tau: QuantileLevel,
    kappa: f64,
) -> Result<Matrix> {
    check_dims(gamma, x, y)?;
    ensure_positive_kappa(kappa)?;
    let (n, m) = (x.nrows(), y.ncols());
    let scale = 1.0 / (kappa * (m * n) as f64);
    let resid = y - &x.dot(gamma);
    Ok(clip_to_tau_interval(&resid.mapv(|v| v * scale), tau))
}

fn ensure_positive_kappa(kappa: f64) -> Result<()> {
    if kappa.is_finite() && kappa > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "smoothing parameter kappa must be positive, got {kappa}"
        )))
    }
}

/// Smoothed loss `(mn)^-1 <Y - X G, Theta*> - (kappa/2) ||Theta*||_F^2`.
///
/// Satisfies `smoothed <= empirical <= smoothed + kappa (tau v (1-tau))^2 nm / 2`.
pub fn smoothed_loss(
    gamma: &Matrix,
    x: &Matrix,
    y: &Matrix,
    tau: QuantileLevel,
    kappa: f64,
) -> Result<f64> {
    check_dims(gamma, x, y)?;
    ensure_positive_kappa(kappa)?;
    let (n, m) = (x.nrows(), y.ncols());
    let mn = (m * n) as f64;
    let scale = 1.0 / (kappa * mn);
    let resid = y - &x.dot(gamma);
    let theta = clip_to_tau_interval(&resid.mapv(|v| v * scale), tau);
    let inner: f64 = resid.iter().zip(theta.iter()).map(|(r, t)| r * t).sum();
    let theta_sq: f64 = theta.iter().map(|t| t * t).sum();
    Ok(inner / mn - 0.5 * kappa * theta_sq)
}

/// Gradient of the smoothed loss, `-(mn)^-1 X' Theta*(G)`.
pub fn smoothed_gradient(
    gamma: &Matrix,
    x: &Matrix,
    y: &Matrix,
    tau: QuantileLevel,
    kappa: f64,
) -> Result<Matrix> {
    let theta = optimal_dual(gamma, x, y, tau, kappa)?;
    let (n, m) = (x.nrows(), y.ncols());
    let mn = (m * n) as f64;
    Ok(x.t().dot(&theta).mapv(|v| -v / mn))
}

/// Lipschitz constant of the smoothed gradient, `||X||^2 / (kappa m^2 n^2)`.
pub fn lipschitz_constant(x_spectral_norm: f64, kappa: f64, n: usize, m: usize) -> f64 {
    let mn = (m * n) as f64;
    x_spectral_norm * x_spectral_norm / (kappa * mn * mn)
}
