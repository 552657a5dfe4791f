//! Penalized regression quantiles.
//!
//! The least-squares criterion is replaced by the check loss
//! `u_a(z) = a z - z 1[z <= 0]`, whose population minimizer is the
//! conditional a-quantile. The optimizer reuses the same alternating scheme
//! as the least-squares fits by smoothing the check-loss corner over a small
//! window (see [`crate::loss::SmoothedCheckLoss`]) and refreshing the
//! induced quadratic weights each sweep. Objective traces are surrogate
//! values (monotone by construction); the reported final objective is the
//! exact unsmoothed check-loss criterion.

pub use crate::loss::{check_loss, SmoothedCheckLoss};

use crate::error::{Error, Result};
use crate::gam::{fit_with_loss, Dataset, FitConfig, FitResult};
use crate::nested::{fit_nested_with_loss, NestedFitResult, NetworkSpec};
use crate::penalty::j_functionals;

/// Quantile level plus corner-smoothing width on top of a base fit
/// configuration.
#[derive(Debug, Clone)]
pub struct QuantileConfig {
    /// Quantile level in (0, 1).
    pub alpha: f64,
    /// Half-width of the quadratic window replacing the check-loss corner,
    /// in response units. Defaults to 1e-3 times the sample standard
    /// deviation of the response.
    pub epsilon: Option<f64>,
    pub base: FitConfig,
}

impl QuantileConfig {
    pub fn new(alpha: f64, base: FitConfig) -> Self {
        Self {
            alpha,
            epsilon: None,
            base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "quantile level must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "smoothing width must be positive, got {e}"
                )));
            }
        }
        self.base.validate()
    }

    fn resolve_epsilon(&self, y: &[f64]) -> f64 {
        if let Some(e) = self.epsilon {
            return e;
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        (1e-3 * sd).max(1e-9)
    }
}

/// Exact check-loss objective `(1/n) Σ u_a(y - Ŷ) + λ² J`.
fn exact_quantile_objective(
    result: &FitResult,
    data: &Dataset,
    qcfg: &QuantileConfig,
) -> Result<f64> {
    let n = data.n();
    let mut fit = 0.0;
    for i in 0..n {
        let r = data.y()[i] - result.model.evaluate(data.row(i)).value;
        fit += check_loss(r, qcfg.alpha);
    }
    let jv = j_functionals(
        &result.model.link,
        &result.model.components,
        &qcfg.base.penalty,
    )?;
    Ok(fit / n as f64 + qcfg.base.lambda * qcfg.base.lambda * jv.j)
}

/// Quantile fit of the generalized additive model with unknown link.
pub fn fit_quantile_gam(data: &Dataset, qcfg: &QuantileConfig) -> Result<FitResult> {
    qcfg.validate()?;
    let eps = qcfg.resolve_epsilon(data.y());
    let loss = SmoothedCheckLoss::new(qcfg.alpha, eps);
    let mut result = fit_with_loss(data, &qcfg.base, loss)?;
    result.final_objective = exact_quantile_objective(&result, data, qcfg)?;
    Ok(result)
}

/// Quantile fit of a nested composition model.
pub fn fit_quantile_nested(
    data: &Dataset,
    spec: &NetworkSpec,
    qcfg: &QuantileConfig,
) -> Result<NestedFitResult> {
    qcfg.validate()?;
    let eps = qcfg.resolve_epsilon(data.y());
    let loss = SmoothedCheckLoss::new(qcfg.alpha, eps);
    let mut result = fit_nested_with_loss(data, spec, &qcfg.base, loss)?;
    // Replace the surrogate by the exact check-loss criterion.
    let n = data.n();
    let mut fit = 0.0;
    for i in 0..n {
        let r = data.y()[i] - result.model.evaluate(data.row(i)).value;
        fit += check_loss(r, qcfg.alpha);
    }
    result.final_objective = fit / n as f64
        + qcfg.base.lambda * qcfg.base.lambda * crate::nested::root_penalty(&result.model)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn toy_data(n: usize, seed: u64, noise: f64) -> Dataset {
        let mut rng = SplitMix64::new(seed);
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x = [rng.next_f64(), rng.next_f64()];
            y.push((2.0 * x[0]).sin() + 0.5 * x[1] + noise * rng.next_normal());
            rows.push(x.to_vec());
        }
        Dataset::from_rows(&rows, y).unwrap()
    }

    fn small_cfg(lambda: f64) -> FitConfig {
        let mut cfg = FitConfig::new(lambda);
        cfg.m_interior_knots = 1;
        cfg.f_interior_knots = 1;
        cfg.max_sweeps = 80;
        cfg
    }

    #[test]
    fn config_validation() {
        assert!(QuantileConfig::new(0.5, small_cfg(0.1)).validate().is_ok());
        assert!(QuantileConfig::new(0.0, small_cfg(0.1)).validate().is_err());
        assert!(QuantileConfig::new(1.0, small_cfg(0.1)).validate().is_err());
        let mut q = QuantileConfig::new(0.5, small_cfg(0.1));
        q.epsilon = Some(-1.0);
        assert!(q.validate().is_err());
    }

    #[test]
    fn surrogate_trace_is_monotone_and_exact_objective_reported() {
        let data = toy_data(40, 3, 0.4);
        let qcfg = QuantileConfig::new(0.25, small_cfg(0.05));
        let fit = fit_quantile_gam(&data, &qcfg).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0]));
        }
        // The reported objective is the exact pinball criterion, which the
        // surrogate bounds from above up to the smoothing gap.
        let eps = qcfg.resolve_epsilon(data.y());
        let surrogate_end = *fit.objective_trace.last().unwrap();
        assert!(fit.final_objective <= surrogate_end + 1e-12);
        assert!(fit.final_objective >= surrogate_end - eps / 4.0 - 1e-12);
    }

    #[test]
    fn interpolation_regime_drives_check_loss_to_zero() {
        // Representable truth, no noise, tiny lambda: check loss ~ 0 at any
        // alpha.
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..7 {
            for j in 0..7 {
                let x = [(i as f64 + 1.0) / 8.0, (j as f64 + 1.0) / 8.0];
                y.push(0.6 * x[0] + 0.4 * x[1]);
                rows.push(x.to_vec());
            }
        }
        let data = Dataset::from_rows(&rows, y).unwrap();
        for &alpha in &[0.25, 0.75] {
            let mut base = small_cfg(1e-8);
            base.max_sweeps = 300;
            base.tol_objective = 1e-13;
            let mut qcfg = QuantileConfig::new(alpha, base);
            qcfg.epsilon = Some(1e-5);
            let fit = fit_quantile_gam(&data, &qcfg).unwrap();
            let mut loss = 0.0;
            for i in 0..data.n() {
                let r = data.y()[i] - fit.model.evaluate(data.row(i)).value;
                loss += check_loss(r, alpha);
            }
            loss /= data.n() as f64;
            assert!(loss <= 1e-6, "alpha {alpha}: training check loss {loss}");
        }
    }

    #[test]
    fn nested_quantile_reduces_like_nested_ls() {
        let data = toy_data(36, 17, 0.3);
        let spec = NetworkSpec::new(vec![2], vec![0, 1], 2).unwrap();
        let qcfg = QuantileConfig::new(0.5, small_cfg(0.05));
        let fit = fit_quantile_nested(&data, &spec, &qcfg).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0]));
        }
        for b in crate::nested::check_layer_norms(&fit.model).unwrap() {
            assert!(b.residual <= 1e-8);
        }
    }
}
