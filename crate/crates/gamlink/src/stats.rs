//! Standard normal distribution function.

/// Standard normal CDF with absolute error below 1e-14.
///
/// Computed as `Φ(x) = erfc(-x/√2)/2`, where erfc uses the alternating
/// Maclaurin series of erf for small arguments and the Lentz continued
/// fraction for the tail. The reflection `Φ(-x) = 1 - Φ(x)` holds by
/// construction because only `|x|` enters the kernel.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let t = x / std::f64::consts::SQRT_2;
    if x >= 0.0 {
        1.0 - 0.5 * erfc_nonneg(t)
    } else {
        0.5 * erfc_nonneg(-t)
    }
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// erfc(t) for t >= 0.
fn erfc_nonneg(t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t < 2.0 {
        1.0 - erf_series(t)
    } else {
        erfc_continued_fraction(t)
    }
}

/// Maclaurin series erf(t) = (2/√π) Σ (-1)^n t^(2n+1) / (n! (2n+1)),
/// accurate to full precision for t < 2.
fn erf_series(t: f64) -> f64 {
    let t2 = t * t;
    let mut term = t;
    let mut sum = t;
    for n in 1..200 {
        let nf = n as f64;
        term *= -t2 / nf;
        let add = term / (2.0 * nf + 1.0);
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// Lentz evaluation of the continued fraction
/// erfc(t) = exp(-t²)/√π · 1/(t + (1/2)/(t + 1/(t + (3/2)/(t + ...)))).
fn erfc_continued_fraction(t: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = t.max(tiny);
    let mut c = f;
    let mut d = 0.0;
    for n in 1..400 {
        let a = n as f64 / 2.0;
        d = t + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = t + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-(t * t)).exp() / (std::f64::consts::PI.sqrt() * f)
}
