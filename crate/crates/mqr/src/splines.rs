//! Nonparametric quantile curves over a B-spline basis.
//!
//! Responses observed along a common time axis are modeled as
//! `q_j(t) = G_*j' b(t)` with `b` a clamped cubic B-spline basis, so the
//! curve-fitting problem is the same penalized regression with the basis
//! design in place of the covariates. The fitted coefficient matrix
//! factorises into factor curves `f_k(t) = sigma_k U_{*k}' b(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{self, FactorModel};
use crate::loss::QuantileLevel;
use crate::matrix::Matrix;
use crate::solver::{self, FitResult, SolverConfig};

pub const DEFAULT_DEGREE: usize = 3;

/// Clamped B-spline basis on `[t_min, t_max]` with uniformly spaced
/// interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    n_basis: usize,
    /// Full knot vector, length n_basis + degree + 1.
    knots: Vec<f64>,
}

/// Basis size rule `ceil(n^0.4)`.
pub fn default_basis_size(n: usize) -> usize {
    let raw = (n as f64).powf(0.4);
    (raw - 1e-9).ceil().max(1.0) as usize
}

impl SplineBasis {
    pub fn uniform(degree: usize, n_basis: usize, t_min: f64, t_max: f64) -> Result<Self> {
        if degree == 0 || n_basis < degree + 1 {
            return Err(Error::InvalidConfig(format!(
                "need n_basis >= degree + 1, got degree {degree}, n_basis {n_basis}"
            )));
        }
        if !(t_min < t_max) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "invalid domain [{t_min}, {t_max}]"
            )));
        }
        let interior = n_basis - degree - 1;
        let mut knots = Vec::with_capacity(n_basis + degree + 1);
        for _ in 0..=degree {
            knots.push(t_min);
        }
        for i in 1..=interior {
            let frac = i as f64 / (interior + 1) as f64;
            knots.push(t_min + frac * (t_max - t_min));
        }
        for _ in 0..=degree {
            knots.push(t_max);
        }
        Ok(Self {
            degree,
            n_basis,
            knots,
        })
    }

    /// Cubic basis sized by the `ceil(n^0.4)` rule (never below degree + 1)
    /// on the observed time range.
    pub fn default_for(times: &[f64]) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidConfig(
                "need at least two time points".into(),
            ));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &t in times {
            if !t.is_finite() {
                return Err(Error::NonFinite("time axis"));
            }
            lo = lo.min(t);
            hi = hi.max(t);
        }
        let size = default_basis_size(times.len()).max(DEFAULT_DEGREE + 1);
        Self::uniform(DEFAULT_DEGREE, size, lo, hi)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn t_min(&self) -> f64 {
        self.knots[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn find_span(&self, t: f64) -> usize {
        // largest i in [degree, n_basis - 1] with knots[i] <= t; the right
        // boundary folds into the last span
        if t >= self.t_max() {
            return self.n_basis - 1;
        }
        let mut lo = self.degree;
        let mut hi = self.n_basis - 1;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= t {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// All basis function values at `t` (Cox-de Boor recursion); entries are
    /// nonnegative and sum to one.
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        if !t.is_finite() || t < self.t_min() || t > self.t_max() {
            return Err(Error::OutOfDomain {
                value: t,
                min: self.t_min(),
                max: self.t_max(),
            });
        }
        let d = self.degree;
        let span = self.find_span(t);
        let mut local = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        local[0] = 1.0;
        for j in 1..=d {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = local[r] / (right[r + 1] + left[j - r]);
                local[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            local[j] = saved;
        }
        let mut out = vec![0.0; self.n_basis];
        for (offset, &v) in local.iter().enumerate() {
            out[span - d + offset] = v;
        }
        Ok(out)
    }

    /// Design matrix with `B[i, l] = b_l(t_i)`.
    pub fn design(&self, times: &[f64]) -> Result<Matrix> {
        if times.is_empty() {
            return Err(Error::InvalidConfig("no time points".into()));
        }
        let mut b = Matrix::zeros((times.len(), self.n_basis));
        for (i, &t) in times.iter().enumerate() {
            let row = self.evaluate(t)?;
            for (l, &v) in row.iter().enumerate() {
                b[[i, l]] = v;
            }
        }
        Ok(b)
    }
}

/// Design matrix builder (row i is the basis evaluated at the i-th time).
pub fn build_design(times: &[f64], basis: &SplineBasis) -> Result<Matrix> {
    basis.design(times)
}

/// Fitted quantile-curve panel: the basis together with the factorised
/// coefficient matrix at one quantile level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveModel {
    pub basis: SplineBasis,
    pub factor_model: FactorModel,
    pub tau: QuantileLevel,
}

impl CurveModel {
    /// Coefficient matrix reassembled from the stored factorisation.
    pub fn gamma(&self) -> Matrix {
        self.factor_model.reconstruct_gamma()
    }

    /// Fitted quantile curves on a grid, one column per response.
    pub fn evaluate_curves(&self, t_grid: &[f64]) -> Result<Matrix> {
        let design = self.basis.design(t_grid)?;
        Ok(design.dot(&self.gamma()))
    }

    /// Factor curves `f_k(t) = sigma_k U_{*k}' b(t)` for the detected rank.
    pub fn factor_curves(&self, t_grid: &[f64]) -> Result<Matrix> {
        let design = self.basis.design(t_grid)?;
        let r = self.factor_model.rank;
        let u_r = self.factor_model.left_vectors.slice(ndarray::s![.., ..r]);
        let mut curves = design.dot(&u_r);
        for k in 0..r {
            let s = self.factor_model.singular_values[k];
            curves.column_mut(k).mapv_inplace(|v| v * s);
        }
        Ok(curves)
    }
}

/// Fit quantile curves with an explicit basis.
pub fn fit_quantile_curves_with_basis(
    times: &[f64],
    y: &Matrix,
    tau: QuantileLevel,
    lambda: f64,
    config: &SolverConfig,
    basis: &SplineBasis,
) -> Result<(CurveModel, FitResult)> {
    if times.len() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} time points for {} observation rows",
            times.len(),
            y.nrows()
        )));
    }
    let design = basis.design(times)?;
    let mut cfg = config.clone();
    cfg.tau = tau;
    cfg.lambda = lambda;
    let fit = solver::fit(&design, y, &cfg)?;
    let factor_model = factor::factorize_default(&fit.gamma_hat)?;
    Ok((
        CurveModel {
            basis: basis.clone(),
            factor_model,
            tau,
        },
        fit,
    ))
}

/// Fit quantile curves with the default cubic basis sized by `ceil(n^0.4)`.
pub fn fit_quantile_curves(
    times: &[f64],
    y: &Matrix,
    tau: QuantileLevel,
    lambda: f64,
    config: &SolverConfig,
) -> Result<(CurveModel, FitResult)> {
    let basis = SplineBasis::default_for(times)?;
    fit_quantile_curves_with_basis(times, y, tau, lambda, config, &basis)
}

/// Least-squares regression-spline fit to the cross-sectional mean curve.
///
/// Returns the fitted trend (length n) and the residual panel with the
/// trend subtracted from every column.
pub fn detrend_mean_curve(times: &[f64], y: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    use ndarray_linalg::Solve;
    if times.len() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} time points for {} observation rows",
            times.len(),
            y.nrows()
        )));
    }
    let basis = SplineBasis::default_for(times)?;
    if times.len() <= basis.n_basis() {
        return Err(Error::SingularDesign);
    }
    let design = basis.design(times)?;
    let row_mean = y.mean_axis(ndarray::Axis(1)).expect("nonempty rows");
    let btb = design.t().dot(&design);
    let rhs = design.t().dot(&row_mean);
    let coeffs = btb.solve(&rhs).map_err(|_| Error::SingularDesign)?;
    let trend = design.dot(&coeffs);
    let mut residual = y.clone();
    for (i, t) in trend.iter().enumerate() {
        residual.row_mut(i).mapv_inplace(|v| v - t);
    }
    Ok((trend.to_vec(), residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{frobenius_norm, svd};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    #[test]
    fn basis_size_rule() {
        assert_eq!(default_basis_size(365), 11);
        assert_eq!(default_basis_size(32), 4);
        assert_eq!(default_basis_size(1000), 16);
    }

    #[test]
    fn clamped_boundaries() {
        let basis = SplineBasis::uniform(3, 8, 0.0, 2.0).unwrap();
        let at_left = basis.evaluate(0.0).unwrap();
        assert!((at_left[0] - 1.0).abs() < 1e-14);
        assert!(at_left[1..].iter().all(|&v| v.abs() < 1e-14));
        let at_right = basis.evaluate(2.0).unwrap();
        assert!((at_right[7] - 1.0).abs() < 1e-14);
        assert!(at_right[..7].iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn partition_of_unity_dense_grid() {
        for n_basis in [4, 5, 8, 13] {
            let basis = SplineBasis::uniform(3, n_basis, -1.0, 4.0).unwrap();
            for i in 0..=1000 {
                let t = -1.0 + 5.0 * i as f64 / 1000.0;
                let values = basis.evaluate(t).unwrap();
                let sum: f64 = values.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "sum {sum} at t {t}");
                assert!(values.iter().all(|&v| v >= -1e-15));
            }
        }
    }

    #[test]
    fn degree_one_hat_functions() {
        // one interior knot at the midpoint: three hat functions
        let basis = SplineBasis::uniform(1, 3, 0.0, 1.0).unwrap();
        let v = basis.evaluate(0.25).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-14);
        assert!((v[1] - 0.5).abs() < 1e-14);
        assert!(v[2].abs() < 1e-14);
        let mid = basis.evaluate(0.5).unwrap();
        assert!((mid[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn out_of_domain_rejected() {
        let basis = SplineBasis::uniform(3, 5, 0.0, 1.0).unwrap();
        assert!(matches!(
            basis.evaluate(1.5),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(basis.evaluate(-0.1).is_err());
    }

    /// Greville abscissae, where the collocation matrix is nonsingular.
    fn greville(basis: &SplineBasis) -> Vec<f64> {
        let d = basis.degree;
        (0..basis.n_basis)
            .map(|l| {
                let mut s = 0.0;
                for j in 1..=d {
                    s += basis.knots[l + j];
                }
                s / d as f64
            })
            .collect()
    }

    #[test]
    fn design_full_rank_at_greville_points() {
        let basis = SplineBasis::uniform(3, 9, 0.0, 3.0).unwrap();
        let times = greville(&basis);
        let design = basis.design(&times).unwrap();
        assert_eq!(design.dim(), (9, 9));
        let s = svd(&design).unwrap().singular_values;
        assert!(s.last().unwrap() > &1e-8, "collocation matrix singular");
    }

    #[test]
    fn single_time_point_design() {
        let basis = SplineBasis::uniform(3, 5, 0.0, 1.0).unwrap();
        let design = basis.design(&[0.4]).unwrap();
        assert_eq!(design.dim(), (1, 5));
    }

    #[test]
    fn constant_coefficients_give_constant_curve() {
        let basis = SplineBasis::uniform(3, 7, 0.0, 1.0).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let design = basis.design(&times).unwrap();
        let coeffs = Array2::from_elem((7, 1), 4.2);
        let curve = design.dot(&coeffs);
        for v in curve.iter() {
            assert!((v - 4.2).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_panel_fits_constant_curve() {
        let times: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y = Array2::from_elem((40, 1), 2.5);
        let cfg = SolverConfig::new(tau(0.5), 0.0)
            .unwrap()
            .with_kappa(1e-6)
            .with_loss_tol(1e-12)
            .with_max_iters(100_000);
        let (model, _) = fit_quantile_curves(&times, &y, tau(0.5), 0.0, &cfg).unwrap();
        let grid: Vec<f64> = (0..100).map(|i| 39.0 * i as f64 / 99.0).collect();
        let curves = model.evaluate_curves(&grid).unwrap();
        for v in curves.iter() {
            assert!((v - 2.5).abs() < 1e-3, "curve value {v}");
        }
    }

    #[test]
    fn proportional_responses_give_rank_one() {
        let times: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let base: Vec<f64> = times
            .iter()
            .map(|&t| (2.0 * std::f64::consts::PI * t).sin() + 2.0)
            .collect();
        let mut y = Array2::zeros((60, 2));
        for i in 0..60 {
            y[[i, 0]] = base[i];
            y[[i, 1]] = 3.0 * base[i];
        }
        let cfg = SolverConfig::new(tau(0.5), 0.0)
            .unwrap()
            .with_kappa(1e-6)
            .with_loss_tol(1e-12)
            .with_max_iters(200_000);
        let (model, _) = fit_quantile_curves(&times, &y, tau(0.5), 1e-4, &cfg).unwrap();
        assert_eq!(model.factor_model.rank, 1);
    }

    #[test]
    fn factor_curves_reconstruct_quantile_curves() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let y = Array2::from_shape_fn((50, 3), |(i, j)| {
            (times[i] * (1.0 + j as f64)).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal)
        });
        let cfg = SolverConfig::new(tau(0.5), 0.0)
            .unwrap()
            .with_kappa(1e-5)
            .with_loss_tol(1e-10)
            .with_max_iters(50_000);
        let (mut model, _) = fit_quantile_curves(&times, &y, tau(0.5), 1e-6, &cfg).unwrap();
        // full-rank reconstruction: sum_k V_jk f_k(t) equals the curve
        model.factor_model.rank = model.factor_model.singular_values.len();
        let grid: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let factors = model.factor_curves(&grid).unwrap();
        let loadings = &model.factor_model.loadings;
        let recon = factors.dot(&loadings.t());
        let direct = model.evaluate_curves(&grid).unwrap();
        assert!(frobenius_norm(&(&recon - &direct)) < 1e-8);

        // truncated reconstruction error bounded by sigma_{r+1} * max_t ||b(t)||
        let r = 1usize;
        let mut truncated = model.clone();
        truncated.rank_truncate_for_test(r);
        let factors_r = truncated.factor_curves(&grid).unwrap();
        let recon_r = factors_r.dot(&truncated.factor_model.sensitivity().t());
        let err = frobenius_norm(&(&recon_r - &direct));
        let tail: f64 = model.factor_model.singular_values[r..]
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt();
        // ||b(t)||_2 <= 1 by partition of unity and nonnegativity
        let bound = tail * (grid.len() as f64).sqrt();
        assert!(err <= bound + 1e-10, "err {err} > bound {bound}");
    }

    impl CurveModel {
        fn rank_truncate_for_test(&mut self, r: usize) {
            self.factor_model.rank = r;
        }
    }

    #[test]
    fn detrend_constant_panel() {
        let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y = Array2::from_elem((30, 4), 7.0);
        let (trend, residual) = detrend_mean_curve(&times, &y).unwrap();
        for t in &trend {
            assert!((t - 7.0).abs() < 1e-9);
        }
        assert!(frobenius_norm(&residual) < 1e-8);
    }

    #[test]
    fn detrend_is_idempotent() {
        let times: Vec<f64> = (0..80).map(|i| i as f64 / 79.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y = Array2::from_shape_fn((80, 3), |(i, _)| {
            (4.0 * times[i]).cos() + rng.sample::<f64, _>(StandardNormal)
        });
        let (_, residual) = detrend_mean_curve(&times, &y).unwrap();
        let (trend2, _) = detrend_mean_curve(&times, &residual).unwrap();
        let norm: f64 = trend2.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "second-pass trend norm {norm}");
    }

    #[test]
    fn detrend_recovers_seasonal_signal() {
        let n = 200;
        let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let signal: Vec<f64> = times
            .iter()
            .map(|&t| 3.0 * (2.0 * std::f64::consts::PI * t).sin())
            .collect();
        let sigma = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let y = Array2::from_shape_fn((n, 6), |(i, _)| {
            signal[i] + sigma * rng.sample::<f64, _>(StandardNormal)
        });
        let (trend, _) = detrend_mean_curve(&times, &y).unwrap();
        let rmse = (trend
            .iter()
            .zip(signal.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rmse < sigma, "rmse {rmse} not below noise sigma {sigma}");
    }

    #[test]
    fn too_few_points_is_singular() {
        let times: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let y = Array2::from_elem((4, 2), 1.0);
        assert!(matches!(
            detrend_mean_curve(&times, &y),
            Err(Error::SingularDesign)
        ));
    }

    #[test]
    fn curve_model_serde_round_trip_is_bit_exact() {
        let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let y = Array2::from_shape_fn((30, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let cfg = SolverConfig::new(tau(0.3), 0.0)
            .unwrap()
            .with_kappa(1e-4)
            .with_max_iters(2_000);
        let (model, _) = fit_quantile_curves(&times, &y, tau(0.3), 0.01, &cfg).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: CurveModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.factor_model.left_vectors, model.factor_model.left_vectors);
        assert_eq!(back.factor_model.singular_values, model.factor_model.singular_values);
        assert_eq!(back.basis, model.basis);
        assert_eq!(back.tau.value(), model.tau.value());
    }
}
