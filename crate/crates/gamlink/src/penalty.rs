//! The smoothness penalty algebra.
//!
//! The penalty acting on a model `(F, m_1, ..., m_d)` combines derivative
//! seminorms `T_l(f)^2 = ∫ f^(l)(x)^2 dx` into
//!
//! ```text
//! S  = Σ_j [ T_1²(m_j) + ρ_j² T_k²(m_j) ]
//! J1 = ρ_0 T_k(F) · S^((2k-1)/4)
//! J2 = T_1(F) · S^(1/4)
//! J  = J1^ν1 + J2^ν2
//! ```
//!
//! J1 and J2 are invariant under the reparameterization
//! `F(z) -> F(α(z + Σβ_j))`, `m_j -> m_j/α - β_j` that leaves the regression
//! function unchanged, so the penalty depends only on the regression
//! function itself. [`transform_model`] implements that family exactly at
//! the spline level.

use crate::error::{Error, Result};
use crate::spline::SplineFunction;
use serde::{Deserialize, Serialize};

/// Penalty configuration: smoothness order, exponents, per-function weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Smoothness order k (k-th derivatives are penalized).
    pub k: usize,
    /// Exponent on J1.
    pub nu1: f64,
    /// Exponent on J2; must satisfy nu2 >= nu1.
    pub nu2: f64,
    /// Weight on T_k(F).
    pub rho0: f64,
    /// Per-component weights on T_k(m_j); empty means all ones.
    #[serde(default)]
    pub rho: Vec<f64>,
}

impl PenaltyConfig {
    /// The standard configuration: given k, unit weights, nu1 = nu2 = 1.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            nu1: 1.0,
            nu2: 1.0,
            rho0: 1.0,
            rho: Vec::new(),
        }
    }

    pub fn with_exponents(mut self, nu1: f64, nu2: f64) -> Self {
        self.nu1 = nu1;
        self.nu2 = nu2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!(
                "smoothness order k must be at least 2, got {}",
                self.k
            )));
        }
        if !(self.nu1 > 0.0 && self.nu2 > 0.0 && self.nu2 >= self.nu1) {
            return Err(Error::InvalidConfig(format!(
                "exponents must satisfy nu2 >= nu1 > 0, got nu1 = {}, nu2 = {}",
                self.nu1, self.nu2
            )));
        }
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return Err(Error::InvalidConfig("rho0 must be positive".into()));
        }
        if self.rho.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig(
                "component weights rho must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Weight for component j (1 when unspecified).
    pub fn rho_for(&self, j: usize) -> f64 {
        self.rho.get(j).copied().unwrap_or(1.0)
    }
}

/// `T_l²(f) = ∫ f^(l)(x)^2 dx` over f's domain.
pub fn t_l_squared(f: &SplineFunction, l: usize) -> Result<f64> {
    f.squared_seminorm(l)
}

/// `S = Σ_j [T_1²(m_j) + ρ_j² T_k²(m_j)]`; zero exactly when every
/// component is constant.
pub fn additive_smoothness(components: &[SplineFunction], cfg: &PenaltyConfig) -> Result<f64> {
    let mut s = 0.0;
    for (j, m) in components.iter().enumerate() {
        let rho = cfg.rho_for(j);
        s += t_l_squared(m, 1)? + rho * rho * t_l_squared(m, cfg.k)?;
    }
    Ok(s)
}

/// The three penalty values, plus the degenerate flag raised when all
/// components are constant (S = 0).
#[derive(Debug, Clone, Copy)]
pub struct JValues {
    pub j1: f64,
    pub j2: f64,
    pub j: f64,
    pub smoothness: f64,
    pub degenerate: bool,
}

pub fn j_functionals(
    link: &SplineFunction,
    components: &[SplineFunction],
    cfg: &PenaltyConfig,
) -> Result<JValues> {
    let s = additive_smoothness(components, cfg)?;
    if s <= 0.0 {
        return Ok(JValues {
            j1: 0.0,
            j2: 0.0,
            j: 0.0,
            smoothness: s,
            degenerate: true,
        });
    }
    let tk_f = t_l_squared(link, cfg.k)?.max(0.0).sqrt();
    let t1_f = t_l_squared(link, 1)?.max(0.0).sqrt();
    let j1 = cfg.rho0 * tk_f * s.powf((2.0 * cfg.k as f64 - 1.0) / 4.0);
    let j2 = t1_f * s.powf(0.25);
    let j = j1.powf(cfg.nu1) + j2.powf(cfg.nu2);
    Ok(JValues {
        j1,
        j2,
        j,
        smoothness: s,
        degenerate: false,
    })
}

/// The reparameterization family: returns
/// `F'(z) = F(α(z + Σβ_j))` and `m_j' = m_j/α - β_j`. The regression
/// function and the penalty values are unchanged.
pub fn transform_model(
    link: &SplineFunction,
    components: &[SplineFunction],
    alpha: f64,
    beta: &[f64],
) -> Result<(SplineFunction, Vec<SplineFunction>)> {
    if beta.len() != components.len() {
        return Err(Error::InvalidConfig(format!(
            "beta length {} does not match component count {}",
            beta.len(),
            components.len()
        )));
    }
    let shift: f64 = beta.iter().sum();
    let new_link = link.affine_reparam(alpha, shift)?;
    let new_components = components
        .iter()
        .zip(beta)
        .map(|(m, &bj)| m.scaled_shifted(1.0 / alpha, -bj))
        .collect();
    Ok((new_link, new_components))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::spline::BasisSpec;

    fn random_spline(rng: &mut SplitMix64, lo: f64, hi: f64, interior: usize) -> SplineFunction {
        let b = BasisSpec::uniform(lo, hi, interior, 4).unwrap();
        let coeffs = (0..b.len()).map(|_| rng.next_normal()).collect();
        SplineFunction::new(b, coeffs).unwrap()
    }

    #[test]
    fn seminorm_of_constant_vanishes() {
        let b = BasisSpec::uniform(0.0, 1.0, 3, 4).unwrap();
        let f = SplineFunction::constant(b, 3.0);
        assert!(t_l_squared(&f, 1).unwrap().abs() < 1e-12);
        // Second-derivative Gram entries are large; cancellation leaves ~1e-11.
        assert!(t_l_squared(&f, 2).unwrap().abs() < 1e-10);
    }

    #[test]
    fn seminorm_of_identity_is_one() {
        let b = BasisSpec::uniform(0.0, 1.0, 3, 4).unwrap();
        let f = SplineFunction::identity(b).unwrap();
        assert!((t_l_squared(&f, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(t_l_squared(&f, 2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn smoothness_of_constants_is_zero_and_linear_is_one() {
        let cfg = PenaltyConfig::new(2);
        let b = BasisSpec::uniform(0.0, 1.0, 2, 4).unwrap();
        let consts = vec![
            SplineFunction::constant(b.clone(), 1.0),
            SplineFunction::constant(b.clone(), -2.0),
        ];
        assert!(additive_smoothness(&consts, &cfg).unwrap().abs() < 1e-12);
        let linear = vec![SplineFunction::identity(b).unwrap()];
        assert!((additive_smoothness(&linear, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn j_of_linear_link_has_no_curvature_term() {
        // T_k of a linear F is 0, so J1 = 0 and J = J2 = T_1(F) S^(1/4).
        let cfg = PenaltyConfig::new(2);
        let b = BasisSpec::uniform(0.0, 1.0, 2, 4).unwrap();
        let link = SplineFunction::identity(b.clone()).unwrap();
        let comps = vec![SplineFunction::identity(b).unwrap()];
        let jv = j_functionals(&link, &comps, &cfg).unwrap();
        assert!(jv.j1.abs() < 1e-9);
        assert!((jv.j2 - 1.0).abs() < 1e-9);
        assert!((jv.j - 1.0).abs() < 1e-9);
        assert!(!jv.degenerate);
    }

    #[test]
    fn degenerate_model_is_flagged() {
        let cfg = PenaltyConfig::new(2);
        let b = BasisSpec::uniform(0.0, 1.0, 2, 4).unwrap();
        let link = SplineFunction::identity(b.clone()).unwrap();
        let comps = vec![SplineFunction::constant(b, 0.7)];
        let jv = j_functionals(&link, &comps, &cfg).unwrap();
        assert!(jv.degenerate);
        assert_eq!(jv.j, 0.0);
    }

    #[test]
    fn transform_is_identity_at_alpha_one_beta_zero() {
        let mut rng = SplitMix64::new(31);
        let link = random_spline(&mut rng, -2.0, 2.0, 3);
        let comps = vec![
            random_spline(&mut rng, 0.0, 1.0, 3),
            random_spline(&mut rng, 0.0, 1.0, 3),
        ];
        let (l2, c2) = transform_model(&link, &comps, 1.0, &[0.0, 0.0]).unwrap();
        assert_eq!(l2, link);
        assert_eq!(c2, comps);
        assert!(transform_model(&link, &comps, -1.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn transform_preserves_regression_function() {
        let mut rng = SplitMix64::new(32);
        let link = random_spline(&mut rng, -4.0, 4.0, 3);
        let comps = vec![
            random_spline(&mut rng, 0.0, 1.0, 3),
            random_spline(&mut rng, 0.0, 1.0, 3),
        ];
        let (l2, c2) = transform_model(&link, &comps, 2.0, &[0.1, -0.1]).unwrap();
        for _ in 0..200 {
            let x1 = rng.next_f64();
            let x2 = rng.next_f64();
            let z = comps[0].eval(x1, 0).unwrap() + comps[1].eval(x2, 0).unwrap();
            let z2 = c2[0].eval(x1, 0).unwrap() + c2[1].eval(x2, 0).unwrap();
            let h = link.eval_clamped(z).0;
            let h2 = l2.eval_clamped(z2).0;
            assert!((h - h2).abs() <= 1e-12 * (1.0 + h.abs()), "{h} vs {h2}");
        }
    }

    #[test]
    fn seminorm_scales_inversely_with_alpha() {
        // T_l(m/alpha) = T_l(m)/alpha for l >= 1.
        let mut rng = SplitMix64::new(33);
        let m = random_spline(&mut rng, 0.0, 1.0, 4);
        for &alpha in &[0.3, 1.7, 9.0] {
            let scaled = m.scaled_shifted(1.0 / alpha, -0.4);
            for l in [1usize, 2] {
                let a = t_l_squared(&m, l).unwrap() / (alpha * alpha);
                let b = t_l_squared(&scaled, l).unwrap();
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn j_is_permutation_invariant_with_weights() {
        let mut rng = SplitMix64::new(34);
        let link = random_spline(&mut rng, -3.0, 3.0, 3);
        let comps = vec![
            random_spline(&mut rng, 0.0, 1.0, 3),
            random_spline(&mut rng, 0.0, 1.0, 2),
            random_spline(&mut rng, 0.0, 1.0, 4),
        ];
        let mut cfg = PenaltyConfig::new(2).with_exponents(1.0, 2.0);
        cfg.rho = vec![0.5, 1.5, 2.0];
        let jv = j_functionals(&link, &comps, &cfg).unwrap();
        let perm = [2usize, 0, 1];
        let comps_p: Vec<_> = perm.iter().map(|&i| comps[i].clone()).collect();
        let mut cfg_p = cfg.clone();
        cfg_p.rho = perm.iter().map(|&i| cfg.rho[i]).collect();
        let jv_p = j_functionals(&link, &comps_p, &cfg_p).unwrap();
        assert!((jv.j - jv_p.j).abs() <= 1e-12 * (1.0 + jv.j));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(PenaltyConfig::new(1).validate().is_err());
        assert!(PenaltyConfig::new(2).with_exponents(2.0, 1.0).validate().is_err());
        assert!(PenaltyConfig::new(2).with_exponents(0.0, 1.0).validate().is_err());
        let mut cfg = PenaltyConfig::new(2);
        cfg.rho = vec![1.0, -1.0];
        assert!(cfg.validate().is_err());
        assert!(PenaltyConfig::new(2).validate().is_ok());
    }
}
