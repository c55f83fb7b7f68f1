//! Data-adaptive penalty selection by simulating the pivotal score
//! statistic, plus the theoretical-rate formula.
//!
//! The score of the empirical check loss at the true coefficients has
//! entries distributed as `1{U <= tau} - tau` with `U` uniform(0, 1).
//! `Lambda = (nm)^-1 ||X' W~||` is therefore pivotal conditional on the
//! design, and the penalty is set to a high quantile of its simulated
//! distribution scaled by a safety multiplier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::QuantileLevel;
use crate::matrix::{self, Matrix};

#[derive(Debug, Clone)]
pub struct PivotalConfig {
    /// Monte Carlo draws of the score statistic.
    pub n_sim: usize,
    /// The penalty is the (1 - alpha) empirical quantile of the draws.
    pub alpha: f64,
    pub seed: u64,
    /// Safety factor applied to the quantile.
    pub multiplier: f64,
}

impl Default for PivotalConfig {
    fn default() -> Self {
        Self {
            n_sim: 500,
            alpha: 0.1,
            seed: 0,
            multiplier: 2.0,
        }
    }
}

impl PivotalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sim < 1 {
            return Err(Error::InvalidConfig("n_sim must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "multiplier must be positive, got {}",
                self.multiplier
            )));
        }
        Ok(())
    }
}

/// One simulated score matrix with entries `1{U <= tau} - tau`.
fn score_matrix(n: usize, m: usize, tau: QuantileLevel, rng: &mut impl Rng) -> Matrix {
    let t = tau.value();
    Matrix::from_shape_fn((n, m), |_| {
        if rng.random::<f64>() <= t {
            1.0 - t
        } else {
            -t
        }
    })
}

/// Simulated realizations of `Lambda = (nm)^-1 ||X' W~||`.
///
/// The RNG stream is partitioned by draw index, so results do not depend on
/// the degree of parallelism.
pub fn pivotal_draws(
    x: &Matrix,
    m: usize,
    tau: QuantileLevel,
    cfg: &PivotalConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    matrix::ensure_finite(x, "pivotal design")?;
    let n = x.nrows();
    if n == 0 || m == 0 {
        return Err(Error::DimensionMismatch(
            "pivotal tuning needs a nonempty design and at least one response".into(),
        ));
    }
    let mn = (n * m) as f64;
    (0..cfg.n_sim)
        .into_par_iter()
        .map(|draw| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(draw as u64);
            let w = score_matrix(n, m, tau, &mut rng);
            Ok(matrix::spectral_norm(&x.t().dot(&w))? / mn)
        })
        .collect()
}

/// Empirical (1 - alpha) quantile: the ceil((1-alpha) n)-th smallest draw.
fn upper_quantile(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((1.0 - alpha) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Penalty level `multiplier * (1 - alpha)-quantile of Lambda`.
pub fn pivotal_lambda(
    x: &Matrix,
    m: usize,
    tau: QuantileLevel,
    cfg: &PivotalConfig,
) -> Result<f64> {
    let draws = pivotal_draws(x, m, tau, cfg)?;
    Ok(cfg.multiplier * upper_quantile(&draws, cfg.alpha))
}

/// Theoretical-rate penalty
/// `constant * m^-1 * sqrt(sigma_max (tau v (1-tau))) * sqrt((p+m)/n)`,
/// with `sigma_max` an estimate of the largest eigenvalue of the covariate
/// covariance (for example the spectral norm of `X'X/n`).
pub fn theoretical_lambda(
    sigma_max_hat: f64,
    tau: QuantileLevel,
    p: usize,
    m: usize,
    n: usize,
    constant: f64,
) -> Result<f64> {
    if !(sigma_max_hat > 0.0 && sigma_max_hat.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma_max estimate must be positive, got {sigma_max_hat}"
        )));
    }
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "constant must be positive, got {constant}"
        )));
    }
    if p == 0 || m == 0 || n == 0 {
        return Err(Error::InvalidConfig(
            "dimensions must all be positive".into(),
        ));
    }
    Ok(constant / m as f64
        * (sigma_max_hat * tau.max_side()).sqrt()
        * ((p + m) as f64 / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::StandardNormal;

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    fn random_design(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn zero_design_gives_zero_lambda() {
        let x = Matrix::zeros((10, 4));
        let cfg = PivotalConfig {
            n_sim: 50,
            ..Default::default()
        };
        let lam = pivotal_lambda(&x, 3, tau(0.1), &cfg).unwrap();
        assert_eq!(lam, 0.0);
    }

    #[test]
    fn seeded_determinism_is_bitwise() {
        let x = random_design(20, 5, 3);
        let cfg = PivotalConfig {
            n_sim: 40,
            seed: 7,
            ..Default::default()
        };
        let a = pivotal_lambda(&x, 4, tau(0.2), &cfg).unwrap();
        let b = pivotal_lambda(&x, 4, tau(0.2), &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn draws_are_nonnegative_and_lambda_too() {
        let x = random_design(15, 4, 5);
        let cfg = PivotalConfig {
            n_sim: 30,
            ..Default::default()
        };
        let draws = pivotal_draws(&x, 3, tau(0.3), &cfg).unwrap();
        assert!(draws.iter().all(|&d| d >= 0.0));
        assert!(pivotal_lambda(&x, 3, tau(0.3), &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn tau_symmetry_within_monte_carlo_tolerance() {
        let x = random_design(40, 10, 11);
        let m = 8;
        // spread of the estimator across independent seeds
        let reps: Vec<f64> = (0..20)
            .map(|s| {
                let cfg = PivotalConfig {
                    n_sim: 200,
                    seed: 100 + s,
                    ..Default::default()
                };
                pivotal_lambda(&x, m, tau(0.1), &cfg).unwrap()
            })
            .collect();
        let mean = reps.iter().sum::<f64>() / reps.len() as f64;
        let sd = (reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64)
            .sqrt();
        let cfg = PivotalConfig {
            n_sim: 200,
            seed: 999,
            ..Default::default()
        };
        let lo = pivotal_lambda(&x, m, tau(0.1), &cfg).unwrap();
        let hi = pivotal_lambda(&x, m, tau(0.9), &cfg).unwrap();
        assert!(
            (lo - hi).abs() <= 3.0 * sd.max(1e-12),
            "lambda({}) = {lo}, lambda({}) = {hi}, 3 sd = {}",
            0.1,
            0.9,
            3.0 * sd
        );
    }

    #[test]
    fn score_entries_are_mean_zero() {
        let t = tau(0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = score_matrix(400, 50, t, &mut rng);
        let n_total = 400.0 * 50.0;
        let mean = w.iter().sum::<f64>() / n_total;
        // entries are bounded by 1, variance tau(1-tau)
        let sigma = (t.value() * (1.0 - t.value()) / n_total).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, 3 sigma {}", 3.0 * sigma);
    }

    #[test]
    fn theoretical_lambda_scalings() {
        let t = tau(0.5);
        let base = theoretical_lambda(3.0, t, 500, 500, 500, 1.0).unwrap();
        // quadrupling n halves lambda
        let quad_n = theoretical_lambda(3.0, t, 500, 500, 2000, 1.0).unwrap();
        assert!((quad_n - base / 2.0).abs() < 1e-12);
        // tau = 0.5 vs 0.9 ratio is sqrt(0.5/0.9)
        let t9 = theoretical_lambda(3.0, tau(0.9), 500, 500, 500, 1.0).unwrap();
        assert!((base / t9 - (0.5f64 / 0.9).sqrt()).abs() < 1e-12);
        // doubling m with p << m scales lambda by (1/2) sqrt(2), approximately
        let small_p = theoretical_lambda(3.0, t, 2, 1000, 500, 1.0).unwrap();
        let doubled = theoretical_lambda(3.0, t, 2, 2000, 500, 1.0).unwrap();
        let ratio = doubled / small_p;
        assert!((ratio - 0.5 * std::f64::consts::SQRT_2).abs() < 2e-3, "ratio {ratio}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let x = random_design(10, 3, 1);
        let mut cfg = PivotalConfig::default();
        cfg.alpha = 1.5;
        assert!(pivotal_lambda(&x, 2, tau(0.5), &cfg).is_err());
        assert!(theoretical_lambda(-1.0, tau(0.5), 2, 2, 2, 1.0).is_err());
        assert!(theoretical_lambda(1.0, tau(0.5), 2, 2, 2, 0.0).is_err());
    }

    #[test]
    fn quantile_monotone_in_alpha() {
        let x = random_design(25, 6, 13);
        let lam_at = |alpha: f64| {
            let cfg = PivotalConfig {
                n_sim: 200,
                alpha,
                seed: 3,
                ..Default::default()
            };
            pivotal_lambda(&x, 5, tau(0.5), &cfg).unwrap()
        };
        assert!(lam_at(0.5) <= lam_at(0.01));
    }
}
