//! Penalized least-squares estimation of additive regression models with an
//! unknown link function.
//!
//! The model is `Y = F[m_1(X^1) + ... + m_d(X^d)] + U` where the link `F` and
//! the additive components `m_j` are all unknown univariate functions,
//! represented here as B-splines. Fitting minimizes a penalized residual sum
//! of squares whose smoothness penalty is invariant under the affine
//! reparameterizations that leave the regression function unchanged. The crate
//! also provides nested (multi-layer) composition models, a quantile-loss
//! variant of both estimators, and a reproducible Monte Carlo harness.
//!
//! Entry points:
//! - [`spline`]: exact univariate B-spline machinery (evaluation, penalty
//!   Gram matrices, affine reparameterization, natural-spline interpolation).
//! - [`penalty`]: the invariant smoothness functionals and the model
//!   transformation family.
//! - [`gam`]: the backfitting estimator, canonicalization, and
//!   smoothing-spline refits.
//! - [`nested`]: layered composition models.
//! - [`quantile`]: check-loss estimation reusing the same optimizer core.
//! - [`sim`]: data generation, integrated squared error metrics, and the
//!   Monte Carlo driver (parallel over replications when the `parallel`
//!   feature is enabled; output is identical either way).

pub mod error;
pub mod gam;
pub mod loss;
pub mod nested;
pub mod penalty;
pub mod quad;
pub mod quantile;
pub mod rng;
pub mod sim;
pub mod solve;
pub mod spline;
pub mod stats;

pub use error::{Error, Result};
pub use gam::{Dataset, FitConfig, FitResult, GamModel, Norming};
pub use gam::objective as gam_objective;
pub use penalty::PenaltyConfig;
pub use spline::{BasisSpec, SplineFunction};
