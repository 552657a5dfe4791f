//! Generalized additive models with an unknown link function.
//!
//! The model is `Y = F[m_1(X^1) + ... + m_d(X^d)] + U` with covariates in
//! the unit cube. Fitting alternates a norm-constrained update of the
//! additive components with an unconstrained penalized update of the link
//! (see [`fit`]); [`canonical::normalize_a9`] maps a fitted model to the
//! identified representative used for reporting, and [`refit`] provides the
//! smoothing-spline polish steps.

mod canonical;
mod fit;
mod refit;

pub use canonical::normalize_a9;
pub use fit::{fit_gam, init_model, update_components, update_link};
pub use refit::{refit_component_natural, refit_link_natural};

pub(crate) use fit::fit_with_loss;

use crate::error::{Error, Result};
use crate::penalty::{j_functionals, PenaltyConfig};
use crate::spline::SplineFunction;
use serde::{Deserialize, Serialize};

/// Covariate matrix in the unit cube plus response vector.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    d: usize,
}

impl Dataset {
    /// Build from row-major covariates; every entry must lie in [0, 1].
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidData("need at least one covariate".into()));
        }
        if y.is_empty() {
            return Err(Error::InvalidData("need at least one observation".into()));
        }
        if x.len() != y.len() * d {
            return Err(Error::InvalidData(format!(
                "covariate matrix has {} entries, expected {} x {}",
                x.len(),
                y.len(),
                d
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite response value".into()));
        }
        for (i, &v) in x.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidData(format!(
                    "covariate entry {v} at row {}, column {} outside [0, 1]",
                    i / d,
                    i % d
                )));
            }
        }
        Ok(Self { x, y, d })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidData("ragged covariate rows".into()));
        }
        let x = rows.iter().flatten().copied().collect();
        Self::new(x, y, d)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.d + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x(i, j)).collect()
    }
}

/// Which normalization the model representation satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norming {
    /// `Σ_j [T_1²(m_j) + ρ_j² T_k²(m_j)] = 1` (the optimizer's constraint).
    Eq10,
    /// Components integrate to zero, squared norms sum to one, link slope
    /// positive on average (the identified reporting form).
    A9,
    /// No normalization maintained (e.g. after a natural-spline refit).
    Raw,
}

/// Link spline plus additive component splines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GamModel {
    pub link: SplineFunction,
    pub components: Vec<SplineFunction>,
    pub norming: Norming,
}

/// A point prediction plus the total distance by which arguments had to be
/// clamped into spline domains to produce it.
#[derive(Debug, Clone, Copy)]
pub struct PointEval {
    pub value: f64,
    pub clamp_distance: f64,
}

impl GamModel {
    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    /// Regression function `F(clamp(Σ_j m_j(x_j)))`.
    pub fn evaluate(&self, x: &[f64]) -> PointEval {
        debug_assert_eq!(x.len(), self.components.len());
        let mut index = 0.0;
        let mut clamp = 0.0;
        for (m, &xj) in self.components.iter().zip(x) {
            let (v, dist) = m.eval_clamped(xj);
            index += v;
            clamp += dist;
        }
        let (value, dist) = self.link.eval_clamped(index);
        PointEval {
            value,
            clamp_distance: clamp + dist,
        }
    }

    /// Current index value `Σ_j m_j(x_j)` with clamped component arguments.
    pub fn index(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(x)
            .map(|(m, &xj)| m.eval_clamped(xj).0)
            .sum()
    }
}

/// Everything the optimizer needs to know beyond the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Penalty factor λ (enters the objective as λ²J).
    pub lambda: f64,
    pub penalty: PenaltyConfig,
    /// Interior knot count for each additive component basis.
    pub m_interior_knots: usize,
    /// Interior knot count for the link basis.
    pub f_interior_knots: usize,
    /// Spline order; defaults to 2k.
    pub spline_order: Option<usize>,
    pub max_sweeps: usize,
    /// Relative objective-change stopping tolerance.
    pub tol_objective: f64,
    /// Floor for majorization points of fractional penalty powers.
    pub mm_floor: f64,
    /// Fractional padding added to the index range when the link basis is
    /// re-knotted.
    pub f_domain_padding: f64,
}

impl FitConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            penalty: PenaltyConfig::new(2),
            m_interior_knots: 4,
            f_interior_knots: 4,
            spline_order: None,
            max_sweeps: 200,
            tol_objective: 1e-8,
            mm_floor: 1e-12,
            f_domain_padding: 0.05,
        }
    }

    pub fn order(&self) -> usize {
        self.spline_order.unwrap_or(2 * self.penalty.k)
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        let order = self.order();
        if order < self.penalty.k + 1 {
            return Err(Error::InvalidConfig(format!(
                "spline order {order} too small for smoothness order k = {}",
                self.penalty.k
            )));
        }
        if !(self.tol_objective > 0.0) || !(self.mm_floor > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.f_domain_padding >= 0.0) {
            return Err(Error::InvalidConfig("padding must be nonnegative".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidConfig("max_sweeps must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: GamModel,
    /// Objective after the initial model and after every sweep
    /// (non-increasing; for quantile fits these are surrogate values).
    pub objective_trace: Vec<f64>,
    /// Final penalty value J.
    pub j_value: f64,
    pub converged: bool,
    pub sweeps_used: usize,
    /// Final reported objective (for quantile fits the exact check-loss
    /// objective, not the smoothed surrogate).
    pub final_objective: f64,
    /// Training points whose index had to be clamped into the link domain
    /// by the final model.
    pub clamp_events: usize,
    /// Initialization fell back to the default slope (degenerate marginals).
    pub init_fallback: bool,
}

/// Penalized objective `(1/n) Σ (y_i - F[Σ m_j(x_ij)])² + λ² J`.
pub fn objective(model: &GamModel, data: &Dataset, cfg: &FitConfig) -> Result<f64> {
    if data.d() != model.dimension() {
        return Err(Error::InvalidData(format!(
            "model has {} components but data has {} covariates",
            model.dimension(),
            data.d()
        )));
    }
    let n = data.n();
    let mut rss = 0.0;
    for i in 0..n {
        let r = data.y()[i] - model.evaluate(data.row(i)).value;
        rss += r * r;
    }
    let jv = j_functionals(&model.link, &model.components, &cfg.penalty)?;
    Ok(rss / n as f64 + cfg.lambda * cfg.lambda * jv.j)
}

/// Fit metadata stored alongside the model in its JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub lambda: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub sweeps: usize,
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// On-disk model format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub link: SplineFunction,
    pub components: Vec<SplineFunction>,
    pub norming: Norming,
    pub k: usize,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn new(result: &FitResult, cfg: &FitConfig, alpha: Option<f64>) -> Self {
        Self {
            link: result.model.link.clone(),
            components: result.model.components.clone(),
            norming: result.model.norming,
            k: cfg.penalty.k,
            meta: ModelMeta {
                lambda: cfg.lambda,
                nu1: cfg.penalty.nu1,
                nu2: cfg.penalty.nu2,
                sweeps: result.sweeps_used,
                objective: result.final_objective,
                alpha,
            },
        }
    }

    pub fn model(&self) -> GamModel {
        GamModel {
            link: self.link.clone(),
            components: self.components.clone(),
            norming: self.norming,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::BasisSpec;

    fn identity_model(d: usize) -> GamModel {
        let fb = BasisSpec::uniform(-1.0, (d as f64).max(1.0) + 1.0, 4, 4).unwrap();
        let link = SplineFunction::identity(fb).unwrap();
        let mb = BasisSpec::uniform(0.0, 1.0, 4, 4).unwrap();
        let components = (0..d)
            .map(|_| SplineFunction::constant(mb.clone(), 0.0))
            .collect();
        GamModel {
            link,
            components,
            norming: Norming::Raw,
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![0.5, 0.5], vec![1.0], 2).is_ok());
        assert!(Dataset::new(vec![1.5, 0.5], vec![1.0], 2).is_err());
        assert!(Dataset::new(vec![0.5], vec![1.0], 2).is_err());
        assert!(Dataset::new(vec![], vec![], 1).is_err());
        assert!(Dataset::new(vec![0.5], vec![f64::NAN], 1).is_err());
    }

    #[test]
    fn identity_link_zero_components_evaluates_to_zero() {
        let m = identity_model(2);
        for x in [[0.0, 0.0], [0.3, 0.9], [1.0, 1.0]] {
            let e = m.evaluate(&x);
            assert!(e.value.abs() < 1e-13);
            assert_eq!(e.clamp_distance, 0.0);
        }
    }

    #[test]
    fn single_active_component_passes_through_identity_link() {
        let mut m = identity_model(2);
        let mb = BasisSpec::uniform(0.0, 1.0, 4, 4).unwrap();
        m.components[0] = SplineFunction::identity(mb).unwrap();
        for x in [[0.0, 0.5], [0.25, 0.1], [1.0, 0.7]] {
            let e = m.evaluate(&x);
            assert!((e.value - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_matches_direct_composition() {
        use crate::rng::SplitMix64;
        let mut rng = SplitMix64::new(61);
        let fb = BasisSpec::uniform(-3.0, 3.0, 4, 4).unwrap();
        let mb = BasisSpec::uniform(0.0, 1.0, 3, 4).unwrap();
        let link =
            SplineFunction::new(fb.clone(), (0..fb.len()).map(|_| rng.next_normal()).collect())
                .unwrap();
        let components: Vec<_> = (0..2)
            .map(|_| {
                SplineFunction::new(
                    mb.clone(),
                    (0..mb.len()).map(|_| rng.next_normal()).collect(),
                )
                .unwrap()
            })
            .collect();
        let model = GamModel {
            link: link.clone(),
            components: components.clone(),
            norming: Norming::Raw,
        };
        for _ in 0..100 {
            let x = [rng.next_f64(), rng.next_f64()];
            let z =
                components[0].eval(x[0], 0).unwrap() + components[1].eval(x[1], 0).unwrap();
            let direct = link.eval_clamped(z).0;
            let got = model.evaluate(&x).value;
            assert!((got - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn objective_of_perfect_zero_model_is_zero() {
        let model = identity_model(1);
        let data = Dataset::new(vec![0.1, 0.5, 0.9], vec![0.0, 0.0, 0.0], 1).unwrap();
        let cfg = FitConfig::new(0.5);
        // All functions constant/linear: residuals zero, S = 0 so J = 0.
        let obj = objective(&model, &data, &cfg).unwrap();
        assert!(obj.abs() < 1e-13);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::new(0.1).validate().is_ok());
        assert!(FitConfig::new(0.0).validate().is_err());
        let mut c = FitConfig::new(0.1);
        c.spline_order = Some(2);
        assert!(c.validate().is_err());
    }
}
