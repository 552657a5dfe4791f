//! Residual losses driving the fit.
//!
//! Both estimators minimize `(1/n) Σ loss(y_i - eta_i) + penalty`. The inner
//! solvers only need a quadratic majorant of the loss around the current
//! residual, which exists whenever the loss derivative is Lipschitz:
//!
//! ```text
//! loss(r) <= loss(r0) + loss'(r0) (r - r0) + (M/2) (r - r0)^2
//! ```
//!
//! Completing the square turns that into weighted least squares on the
//! working response `u = eta0 + loss'(r0)/M` with weight `M/2`, which is how
//! the squared-error and smoothed check-loss fits share one optimizer core.

pub trait ResidualLoss {
    fn value(&self, r: f64) -> f64;
    fn deriv(&self, r: f64) -> f64;
    /// Global Lipschitz bound M on the loss derivative.
    fn curvature_bound(&self) -> f64;
}

/// Plain squared error; the majorant is exact.
#[derive(Debug, Clone, Copy)]
pub struct SquaredLoss;

impl ResidualLoss for SquaredLoss {
    fn value(&self, r: f64) -> f64 {
        r * r
    }

    fn deriv(&self, r: f64) -> f64 {
        2.0 * r
    }

    fn curvature_bound(&self) -> f64 {
        2.0
    }
}

/// The check loss `u_a(z) = a z - z 1[z <= 0]`, whose population minimizer
/// is the a-quantile.
pub fn check_loss(z: f64, alpha: f64) -> f64 {
    if z > 0.0 {
        alpha * z
    } else {
        (alpha - 1.0) * z
    }
}

/// Check loss with the corner replaced by a quadratic on `|z| < epsilon`,
/// matching value and slope at both ends. The surrogate is convex, once
/// continuously differentiable, equals the check loss outside the window,
/// and exceeds it by at most `epsilon/4` inside.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedCheckLoss {
    pub alpha: f64,
    pub epsilon: f64,
}

impl SmoothedCheckLoss {
    pub fn new(alpha: f64, epsilon: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0, 1)");
        assert!(epsilon > 0.0, "epsilon must be positive");
        Self { alpha, epsilon }
    }

    /// Value, first derivative, and curvature at z.
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        let (a, e) = (self.alpha, self.epsilon);
        if z >= e {
            (a * z, a, 0.0)
        } else if z <= -e {
            ((a - 1.0) * z, a - 1.0, 0.0)
        } else {
            // Matching value and slope at +-epsilon pins all coefficients:
            // q(z) = z^2/(4e) + (a - 1/2) z + e/4.
            let value = z * z / (4.0 * e) + (a - 0.5) * z + e / 4.0;
            let deriv = z / (2.0 * e) + (a - 0.5);
            (value, deriv, 1.0 / (2.0 * e))
        }
    }
}

impl ResidualLoss for SmoothedCheckLoss {
    fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    fn deriv(&self, r: f64) -> f64 {
        self.eval(r).1
    }

    fn curvature_bound(&self) -> f64 {
        1.0 / (2.0 * self.epsilon)
    }
}
