//! Canonicalization of a fitted model to its identified representative.
//!
//! The regression function determines `(F, m_1, ..., m_d)` only up to the
//! affine reparameterization family, so reporting requires pinning location,
//! scale, and orientation: every component integrates to zero over its
//! domain, the squared norms sum to one, and the link is increasing on
//! average. Location and scale are reached exactly through the
//! transformation family; orientation flips compose both sides with
//! negation when the average link slope is negative.

use super::{GamModel, Norming};
use crate::error::{Error, Result};
use crate::spline::SplineFunction;

/// Mean, centered variance, and domain length of a component over its
/// domain, computed exactly from the Gram matrices.
fn component_moments(m: &SplineFunction) -> Result<(f64, f64)> {
    let len = m.basis().domain_hi() - m.basis().domain_lo();
    let mean = m.integral() / len;
    let sq = m.squared_seminorm(0)?;
    let var = sq - mean * mean * len;
    Ok((mean, var.max(0.0)))
}

/// Range of a spline over its domain, bracketed on a fine grid refined by
/// the endpoints (used only to orient and bound the index interval).
fn value_range(m: &SplineFunction, grid: usize) -> (f64, f64) {
    let lo = m.basis().domain_lo();
    let hi = m.basis().domain_hi();
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for i in 0..=grid {
        let x = lo + (hi - lo) * i as f64 / grid as f64;
        let v = m.eval_clamped(x).0;
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    (vmin, vmax)
}

/// Maps a model to the identified representative: components centered, the
/// sum of squared component norms equal to one, and the link increasing on
/// average over the index range. The regression function is unchanged.
pub fn normalize_a9(model: &GamModel) -> Result<GamModel> {
    let mut means = Vec::with_capacity(model.components.len());
    let mut total_var = 0.0;
    let mut total_sq = 0.0;
    for m in &model.components {
        let (mean, var) = component_moments(m)?;
        means.push(mean);
        total_var += var;
        total_sq += m.squared_seminorm(0)?;
    }
    if !(total_var > 1e-14 * (1.0 + total_sq)) {
        return Err(Error::Unidentified(
            "all additive components are constant; location and scale cannot be pinned".into(),
        ));
    }
    let alpha = total_var.sqrt();
    let betas: Vec<f64> = means.iter().map(|&mu| mu / alpha).collect();
    let shift: f64 = betas.iter().sum();
    let link = model.link.affine_reparam(alpha, shift)?;
    let components: Vec<SplineFunction> = model
        .components
        .iter()
        .zip(&betas)
        .map(|(m, &b)| m.scaled_shifted(1.0 / alpha, -b))
        .collect();

    // Orientation: average slope of the link over the achievable index
    // range is (F(z_hi) - F(z_lo)) / (z_hi - z_lo).
    let mut z_lo = 0.0;
    let mut z_hi = 0.0;
    for m in &components {
        let (vmin, vmax) = value_range(m, 512);
        z_lo += vmin;
        z_hi += vmax;
    }
    let avg_slope = if z_hi > z_lo {
        (link.eval_clamped(z_hi).0 - link.eval_clamped(z_lo).0) / (z_hi - z_lo)
    } else {
        1.0
    };
    let (link, components) = if avg_slope < 0.0 {
        (
            link.reflect(),
            components
                .into_iter()
                .map(|m| m.scaled_shifted(-1.0, 0.0))
                .collect(),
        )
    } else {
        (link, components)
    };
    Ok(GamModel {
        link,
        components,
        norming: Norming::A9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::transform_model;
    use crate::rng::SplitMix64;
    use crate::spline::BasisSpec;

    fn random_model(rng: &mut SplitMix64, d: usize) -> GamModel {
        let fb = BasisSpec::uniform(-3.0, 3.0, 3, 4).unwrap();
        let mb = BasisSpec::uniform(0.0, 1.0, 3, 4).unwrap();
        let link =
            SplineFunction::new(fb.clone(), (0..fb.len()).map(|_| rng.next_normal()).collect())
                .unwrap();
        let components = (0..d)
            .map(|_| {
                SplineFunction::new(
                    mb.clone(),
                    (0..mb.len()).map(|_| rng.next_normal()).collect(),
                )
                .unwrap()
            })
            .collect();
        GamModel {
            link,
            components,
            norming: Norming::Raw,
        }
    }

    fn a9_residuals(model: &GamModel) -> (f64, f64) {
        let mut sum_sq = 0.0;
        let mut max_mean = 0.0f64;
        for m in &model.components {
            let (mean, var) = component_moments(m).unwrap();
            max_mean = max_mean.max(mean.abs());
            sum_sq += var + mean * mean;
        }
        (max_mean, (sum_sq - 1.0).abs())
    }

    #[test]
    fn output_satisfies_both_identities() {
        let mut rng = SplitMix64::new(71);
        for _ in 0..20 {
            let model = random_model(&mut rng, 2);
            let canon = normalize_a9(&model).unwrap();
            let (mean_resid, norm_resid) = a9_residuals(&canon);
            assert!(mean_resid <= 1e-8, "mean residual {mean_resid}");
            assert!(norm_resid <= 1e-8, "norm residual {norm_resid}");
            assert_eq!(canon.norming, Norming::A9);
        }
    }

    #[test]
    fn regression_function_is_preserved() {
        let mut rng = SplitMix64::new(72);
        let model = random_model(&mut rng, 2);
        let canon = normalize_a9(&model).unwrap();
        for _ in 0..500 {
            let x = [rng.next_f64(), rng.next_f64()];
            let a = model.evaluate(&x).value;
            let b = canon.evaluate(&x).value;
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn idempotent_on_canonical_models() {
        let mut rng = SplitMix64::new(73);
        let model = random_model(&mut rng, 2);
        let canon = normalize_a9(&model).unwrap();
        let twice = normalize_a9(&canon).unwrap();
        for (a, b) in canon.components.iter().zip(&twice.components) {
            for (ca, cb) in a.coefficients().iter().zip(b.coefficients()) {
                assert!((ca - cb).abs() <= 1e-10);
            }
        }
        for (ca, cb) in canon
            .link
            .coefficients()
            .iter()
            .zip(twice.link.coefficients())
        {
            assert!((ca - cb).abs() <= 1e-10);
        }
    }

    #[test]
    fn transformed_models_map_to_the_same_canonical_form() {
        let mut rng = SplitMix64::new(74);
        for _ in 0..10 {
            let model = random_model(&mut rng, 2);
            let canon = normalize_a9(&model).unwrap();
            let alpha = 0.1 + 9.9 * rng.next_f64();
            let beta = [rng.next_range(-1.0, 1.0), rng.next_range(-1.0, 1.0)];
            let (tl, tc) = transform_model(&model.link, &model.components, alpha, &beta).unwrap();
            let transformed = GamModel {
                link: tl,
                components: tc,
                norming: Norming::Raw,
            };
            let canon2 = normalize_a9(&transformed).unwrap();
            for (a, b) in canon.components.iter().zip(&canon2.components) {
                // L2 distance on a grid.
                let mut dist = 0.0;
                for i in 0..=200 {
                    let x = i as f64 / 200.0;
                    let d = a.eval_clamped(x).0 - b.eval_clamped(x).0;
                    dist += d * d / 201.0;
                }
                assert!(dist.sqrt() <= 1e-8, "component distance {}", dist.sqrt());
            }
        }
    }

    #[test]
    fn decreasing_link_is_flipped() {
        let mut rng = SplitMix64::new(75);
        let model = random_model(&mut rng, 2);
        // Force a decreasing link: negate an increasing one.
        let fb = BasisSpec::uniform(-3.0, 3.0, 3, 4).unwrap();
        let dec = SplineFunction::identity(fb).unwrap().scaled_shifted(-1.0, 0.3);
        let model = GamModel {
            link: dec,
            components: model.components,
            norming: Norming::Raw,
        };
        let canon = normalize_a9(&model).unwrap();
        let lo = canon.link.basis().domain_lo();
        let hi = canon.link.basis().domain_hi();
        assert!(canon.link.eval_clamped(hi).0 > canon.link.eval_clamped(lo).0);
        for _ in 0..100 {
            let x = [rng.next_f64(), rng.next_f64()];
            let a = model.evaluate(&x).value;
            let b = canon.evaluate(&x).value;
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn all_constant_components_are_rejected() {
        let mb = BasisSpec::uniform(0.0, 1.0, 2, 4).unwrap();
        let fb = BasisSpec::uniform(-1.0, 1.0, 2, 4).unwrap();
        let model = GamModel {
            link: SplineFunction::identity(fb).unwrap(),
            components: vec![
                SplineFunction::constant(mb.clone(), 1.0),
                SplineFunction::constant(mb, -0.5),
            ],
            norming: Norming::Raw,
        };
        assert!(normalize_a9(&model).is_err());
    }
}
