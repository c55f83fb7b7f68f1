//! Low-rank multivariate quantile regression.
//!
//! Estimates the conditional quantiles of an `m`-variate response panel
//! `Y` (n×m) given covariates `X` (n×p) as `q_j(tau | x) = x' G_{*j}`,
//! where the coefficient matrix `G` (p×m) is encouraged to be low rank
//! through a nuclear-norm penalty:
//!
//! ```text
//! minimize over S:  (mn)^-1 sum_ij rho_tau(Y_ij - X_i' S_*j) + lambda ||S||_*
//! ```
//!
//! The non-smooth check loss is replaced by a Nesterov-smoothed surrogate
//! with an exact Lipschitz gradient, and the composite problem is solved by
//! an accelerated proximal-gradient iteration whose proximal step is
//! singular value thresholding ([`solver`]). The fitted coefficient matrix
//! factorises through its SVD into factors, loadings, contributions and
//! sensitivities ([`factor`]), which extends to nonparametric quantile
//! curves over a B-spline basis ([`splines`]) and to a multivariate
//! CAViaR-style value-at-risk model built on lagged return features
//! ([`samcvar`]).
//!
//! Supporting machinery: penalty tuning by simulated pivotal statistics or
//! the theoretical rate formula ([`tuning`]), synthetic study designs with
//! known ground truth ([`sim`]), and CSV/JSON persistence ([`persist`]).

pub mod error;
pub mod factor;
pub mod loss;
pub mod matrix;
pub mod persist;
pub mod samcvar;
pub mod sim;
pub mod solver;
pub mod splines;
pub mod stats;
pub mod tuning;

pub use error::{Error, Result};
pub use loss::QuantileLevel;
pub use matrix::Matrix;
pub use solver::{FitResult, SolverConfig};
