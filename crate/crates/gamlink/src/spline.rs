//! Univariate B-spline machinery.
//!
//! All function estimates in this crate (link, additive components, nested
//! nodes) are splines over clamped knot vectors. This module provides exact
//! basis and derivative evaluation, penalty Gram matrices integrated by
//! per-span Gauss-Legendre quadrature (exact for the polynomial integrands),
//! affine reparameterization of the argument, L2 projection, and penalized
//! natural-spline interpolation.
//!
//! Evaluation is strict: arguments outside the basis domain are an error.
//! Callers that may step outside a domain (the link during fitting,
//! prediction at new points) clamp explicitly via [`SplineFunction::eval_clamped`].

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A clamped B-spline basis on `[domain_lo, domain_hi]`.
///
/// `order` is the number of coefficients a single polynomial piece carries
/// (polynomial degree `order - 1`). The knot vector repeats each endpoint
/// `order` times, so the basis functions form a partition of unity on the
/// whole domain and the count of basis functions equals
/// `interior_knots + order`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    domain: (f64, f64),
    order: usize,
    knots: Vec<f64>,
}

impl BasisSpec {
    /// Clamped basis with equally spaced interior knots.
    pub fn uniform(lo: f64, hi: f64, interior_knots: usize, order: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidBasis(format!(
                "domain [{lo}, {hi}] must be a finite nondegenerate interval"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidBasis("order must be at least 1".into()));
        }
        let step = (hi - lo) / (interior_knots as f64 + 1.0);
        let interior: Vec<f64> = (1..=interior_knots)
            .map(|i| lo + step * i as f64)
            .collect();
        Self::with_interior_knots(lo, hi, &interior, order)
    }

    /// Clamped basis with a caller-supplied interior knot sequence.
    pub fn with_interior_knots(lo: f64, hi: f64, interior: &[f64], order: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidBasis(format!(
                "domain [{lo}, {hi}] must be a finite nondegenerate interval"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidBasis("order must be at least 1".into()));
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * order);
        knots.extend(std::iter::repeat(lo).take(order));
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat(hi).take(order));
        for w in knots.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(Error::InvalidBasis("knots must be non-decreasing".into()));
            }
        }
        for &t in interior {
            if !(t > lo && t < hi) {
                return Err(Error::InvalidBasis(format!(
                    "interior knot {t} must lie strictly inside ({lo}, {hi})"
                )));
            }
        }
        // No knot value may repeat more than `order` times.
        let mut run = 1usize;
        for w in knots.windows(2) {
            if w[0] == w[1] {
                run += 1;
                if run > order {
                    return Err(Error::InvalidBasis(format!(
                        "knot {} has multiplicity above the order {order}",
                        w[0]
                    )));
                }
            } else {
                run = 1;
            }
        }
        Ok(Self {
            domain: (lo, hi),
            order,
            knots,
        })
    }

    pub fn domain_lo(&self) -> f64 {
        self.domain.0
    }

    pub fn domain_hi(&self) -> f64 {
        self.domain.1
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.order..self.knots.len() - self.order]
    }

    /// Clamps x into the domain, returning the clamped point and the distance.
    pub fn clamp(&self, x: f64) -> (f64, f64) {
        let (lo, hi) = self.domain;
        if x < lo {
            (lo, lo - x)
        } else if x > hi {
            (hi, x - hi)
        } else {
            (x, 0.0)
        }
    }

    fn check_deriv(&self, l: usize) -> Result<()> {
        if l > self.order - 1 {
            return Err(Error::DerivativeOrder {
                requested: l,
                order: self.order,
            });
        }
        Ok(())
    }

    /// Index of the knot span containing x (left-closed; the final span is
    /// closed on both sides so the domain endpoint evaluates).
    fn find_span(&self, x: f64) -> usize {
        let p = self.order;
        let t = &self.knots;
        let last = t.len() - p - 1;
        let mut s = t.partition_point(|&k| k <= x);
        s = s.saturating_sub(1).clamp(p - 1, last);
        while t[s + 1] <= t[s] {
            s -= 1;
        }
        s
    }

    /// Values of the l-th derivatives of the `order` basis functions that are
    /// nonzero at x, together with the index of the first of them.
    pub fn eval_local(&self, x: f64, l: usize) -> Result<(usize, Vec<f64>)> {
        let (lo, hi) = self.domain;
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfDomain { x, lo, hi });
        }
        self.check_deriv(l)?;
        let span = self.find_span(x);
        let vals = ders_basis_row(&self.knots, span, x, self.order - 1, l);
        Ok((span + 1 - self.order, vals))
    }

    /// Values of all basis functions' l-th derivatives at x.
    pub fn eval(&self, x: f64, l: usize) -> Result<Vec<f64>> {
        let (offset, local) = self.eval_local(x, l)?;
        let mut out = vec![0.0; self.len()];
        out[offset..offset + local.len()].copy_from_slice(&local);
        Ok(out)
    }

    /// Gram matrix of l-th derivatives: `Ω_l[a,b] = ∫ B_a^(l) B_b^(l) dx`.
    pub fn gram(&self, l: usize) -> Result<DMatrix<f64>> {
        self.check_deriv(l)?;
        let nb = self.len();
        let p = self.order;
        let rule = GaussLegendre::new(p);
        let mut omega = DMatrix::zeros(nb, nb);
        for s in (p - 1)..(self.knots.len() - p) {
            let (a, b) = (self.knots[s], self.knots[s + 1]);
            if b <= a {
                continue;
            }
            for (x, w) in rule.mapped(a, b) {
                let (offset, vals) = self.eval_local(x, l)?;
                for (i, &vi) in vals.iter().enumerate() {
                    for (j, &vj) in vals.iter().enumerate() {
                        omega[(offset + i, offset + j)] += w * vi * vj;
                    }
                }
            }
        }
        Ok(omega)
    }

    /// Integrals `∫ B_a dx` of each basis function over the domain.
    pub fn moments(&self) -> Vec<f64> {
        let p = self.order;
        let rule = GaussLegendre::new(p);
        let mut out = vec![0.0; self.len()];
        for s in (p - 1)..(self.knots.len() - p) {
            let (a, b) = (self.knots[s], self.knots[s + 1]);
            if b <= a {
                continue;
            }
            for (x, w) in rule.mapped(a, b) {
                let (offset, vals) = self
                    .eval_local(x, 0)
                    .expect("quadrature node inside domain");
                for (i, &v) in vals.iter().enumerate() {
                    out[offset + i] += w * v;
                }
            }
        }
        out
    }

    /// Greville abscissae; the spline with these coefficients is the identity.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.order;
        (0..self.len())
            .map(|a| {
                if p >= 2 {
                    self.knots[a + 1..a + p].iter().sum::<f64>() / (p - 1) as f64
                } else {
                    0.5 * (self.knots[a] + self.knots[a + 1])
                }
            })
            .collect()
    }
}

/// Row of l-th derivative values for the nonzero basis functions on a span
/// (The NURBS Book, algorithm A2.3, keeping only the requested row).
fn ders_basis_row(knots: &[f64], span: usize, x: f64, degree: usize, l: usize) -> Vec<f64> {
    let d = degree;
    let mut ndu = vec![vec![0.0; d + 1]; d + 1];
    let mut left = vec![0.0; d + 1];
    let mut right = vec![0.0; d + 1];
    ndu[0][0] = 1.0;
    for j in 1..=d {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    if l == 0 {
        return (0..=d).map(|j| ndu[j][d]).collect();
    }
    let mut ders = vec![0.0; d + 1];
    let mut a = [vec![0.0; d + 1], vec![0.0; d + 1]];
    for r in 0..=d {
        let mut s1 = 0usize;
        let mut s2 = 1usize;
        a[0].iter_mut().for_each(|v| *v = 0.0);
        a[1].iter_mut().for_each(|v| *v = 0.0);
        a[0][0] = 1.0;
        for k in 1..=l {
            let mut dval = 0.0;
            let rk = r as isize - k as isize;
            let pk = (d - k) as isize;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                dval = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk { k - 1 } else { d - r };
            for j in j1..=j2 {
                a[s2][j] =
                    (a[s1][j] - a[s1][j - 1]) / ndu[(pk + 1) as usize][(rk + j as isize) as usize];
                dval += a[s2][j] * ndu[(rk + j as isize) as usize][pk as usize];
            }
            if r as isize <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[(pk + 1) as usize][r];
                dval += a[s2][k] * ndu[r][pk as usize];
            }
            if k == l {
                ders[r] = dval;
            }
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = 1.0;
    for k in 0..l {
        factor *= (d - k) as f64;
    }
    ders.iter_mut().for_each(|v| *v *= factor);
    ders
}

/// A univariate spline: basis plus coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineRepr", into = "SplineRepr")]
pub struct SplineFunction {
    basis: BasisSpec,
    coefficients: Vec<f64>,
}

impl SplineFunction {
    pub fn new(basis: BasisSpec, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::InvalidBasis(format!(
                "coefficient count {} does not match basis count {}",
                coefficients.len(),
                basis.len()
            )));
        }
        Ok(Self {
            basis,
            coefficients,
        })
    }

    /// The constant function c on the given basis.
    pub fn constant(basis: BasisSpec, c: f64) -> Self {
        let n = basis.len();
        Self {
            basis,
            coefficients: vec![c; n],
        }
    }

    /// The identity map x -> x on the given basis (requires order >= 2).
    pub fn identity(basis: BasisSpec) -> Result<Self> {
        if basis.order() < 2 {
            return Err(Error::InvalidBasis(
                "identity spline needs order at least 2".into(),
            ));
        }
        let coefficients = basis.greville();
        Ok(Self {
            basis,
            coefficients,
        })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn eval(&self, x: f64, l: usize) -> Result<f64> {
        let (offset, vals) = self.basis.eval_local(x, l)?;
        Ok(vals
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.coefficients[offset + i])
            .sum())
    }

    /// Value at x clamped into the domain, plus the clamp distance.
    pub fn eval_clamped(&self, x: f64) -> (f64, f64) {
        let (xc, dist) = self.basis.clamp(x);
        let v = self.eval(xc, 0).expect("clamped point is in domain");
        (v, dist)
    }

    /// First derivative at the clamped point.
    pub fn deriv_clamped(&self, x: f64) -> f64 {
        if self.basis.order() < 2 {
            return 0.0;
        }
        let (xc, _) = self.basis.clamp(x);
        self.eval(xc, 1).expect("clamped point is in domain")
    }

    /// The spline `x -> f(alpha * (x + shift))`, represented exactly by
    /// mapping the knots through the inverse affine map.
    pub fn affine_reparam(&self, alpha: f64, shift: f64) -> Result<SplineFunction> {
        if !(alpha > 0.0) || !alpha.is_finite() || !shift.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "affine reparameterization needs finite alpha > 0 and finite shift, got alpha = {alpha}, shift = {shift}"
            )));
        }
        let knots: Vec<f64> = self.basis.knots.iter().map(|&t| t / alpha - shift).collect();
        let order = self.basis.order;
        let lo = knots[order - 1];
        let hi = knots[knots.len() - order];
        let basis = BasisSpec {
            domain: (lo, hi),
            order,
            knots,
        };
        Ok(SplineFunction {
            basis,
            coefficients: self.coefficients.clone(),
        })
    }

    /// The spline `x -> f(-x)`.
    pub fn reflect(&self) -> SplineFunction {
        let mut knots: Vec<f64> = self.basis.knots.iter().map(|&t| -t).collect();
        knots.reverse();
        let order = self.basis.order;
        let lo = knots[order - 1];
        let hi = knots[knots.len() - order];
        let basis = BasisSpec {
            domain: (lo, hi),
            order,
            knots,
        };
        let mut coefficients = self.coefficients.clone();
        coefficients.reverse();
        SplineFunction {
            basis,
            coefficients,
        }
    }

    /// The spline `a * f + b` (the basis is a partition of unity).
    pub fn scaled_shifted(&self, a: f64, b: f64) -> SplineFunction {
        let coefficients = self.coefficients.iter().map(|&c| a * c + b).collect();
        SplineFunction {
            basis: self.basis.clone(),
            coefficients,
        }
    }

    /// `∫ f dx` over the domain.
    pub fn integral(&self) -> f64 {
        self.basis
            .moments()
            .iter()
            .zip(&self.coefficients)
            .map(|(m, c)| m * c)
            .sum()
    }

    /// `∫ f^(l)(x)^2 dx` over the domain.
    pub fn squared_seminorm(&self, l: usize) -> Result<f64> {
        let omega = self.basis.gram(l)?;
        let c = DVector::from_column_slice(&self.coefficients);
        Ok((&omega * &c).dot(&c))
    }

    /// L2 projection of an arbitrary function onto a basis. Exact when the
    /// sampled function lies in the target space.
    pub fn project_onto_basis<F: Fn(f64) -> f64>(f: F, target: &BasisSpec) -> Result<SplineFunction> {
        let nb = target.len();
        let p = target.order;
        let rule = GaussLegendre::new(p + 2);
        let mut rhs = DVector::zeros(nb);
        for s in (p - 1)..(target.knots.len() - p) {
            let (a, b) = (target.knots[s], target.knots[s + 1]);
            if b <= a {
                continue;
            }
            for (x, w) in rule.mapped(a, b) {
                let (offset, vals) = target.eval_local(x, 0)?;
                let fx = f(x);
                for (i, &v) in vals.iter().enumerate() {
                    rhs[offset + i] += w * v * fx;
                }
            }
        }
        let gram0 = target.gram(0)?;
        let chol = gram0
            .cholesky()
            .ok_or(Error::Singular("basis projection normal equations"))?;
        let coefficients = chol.solve(&rhs);
        SplineFunction::new(target.clone(), coefficients.iter().copied().collect())
    }

    /// Natural-spline interpolant: among order-2k splines with knots at the
    /// data points, minimizes `∫ f^(k)(x)^2 dx` subject to interpolating
    /// every point. Solved as a linear KKT system.
    pub fn natural_interpolant(points: &[(f64, f64)], k: usize) -> Result<SplineFunction> {
        if k == 0 {
            return Err(Error::InvalidConfig(
                "smoothness order k must be at least 1".into(),
            ));
        }
        let mut pts: Vec<(f64, f64)> = points.to_vec();
        if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidData("non-finite interpolation point".into()));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let yscale = pts.iter().map(|(_, y)| y.abs()).fold(0.0, f64::max);
        let mut dedup: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
        for (x, y) in pts {
            match dedup.last() {
                Some(&(px, py)) if px == x => {
                    if (py - y).abs() > 1e-12 * (1.0 + yscale) {
                        return Err(Error::InvalidData(format!(
                            "duplicate abscissa {x} with conflicting ordinates {py} and {y}"
                        )));
                    }
                }
                _ => dedup.push((x, y)),
            }
        }
        let n = dedup.len();
        if n < k.max(2) {
            return Err(Error::InvalidData(format!(
                "natural interpolation of order 2k = {} needs at least {} distinct points, got {n}",
                2 * k,
                k.max(2)
            )));
        }
        let order = 2 * k;
        let lo = dedup[0].0;
        let hi = dedup[n - 1].0;
        let interior: Vec<f64> = dedup[1..n - 1].iter().map(|&(x, _)| x).collect();
        let basis = BasisSpec::with_interior_knots(lo, hi, &interior, order)?;
        let nb = basis.len();

        let omega_k = basis.gram(k)?;
        let mut kkt = DMatrix::zeros(nb + n, nb + n);
        kkt.view_mut((0, 0), (nb, nb))
            .copy_from(&(2.0 * &omega_k));
        let mut rhs = DVector::zeros(nb + n);
        for (i, &(x, y)) in dedup.iter().enumerate() {
            let (offset, vals) = basis.eval_local(x, 0)?;
            for (j, &v) in vals.iter().enumerate() {
                kkt[(nb + i, offset + j)] = v;
                kkt[(offset + j, nb + i)] = v;
            }
            rhs[nb + i] = y;
        }
        let lu = kkt.lu();
        let sol = lu
            .solve(&rhs)
            .ok_or(Error::Singular("natural-spline KKT system"))?;
        let coefficients: Vec<f64> = sol.iter().take(nb).copied().collect();
        let spline = SplineFunction::new(basis, coefficients)?;
        for &(x, y) in &dedup {
            let v = spline.eval(x, 0)?;
            if (v - y).abs() > 1e-9 * (1.0 + yscale) {
                return Err(Error::Numerical(format!(
                    "natural-spline interpolation residual {} at x = {x}",
                    v - y
                )));
            }
        }
        Ok(spline)
    }
}

#[derive(Serialize, Deserialize)]
struct SplineRepr {
    domain: [f64; 2],
    order: usize,
    interior_knots: Vec<f64>,
    coefficients: Vec<f64>,
}

impl From<SplineFunction> for SplineRepr {
    fn from(f: SplineFunction) -> Self {
        SplineRepr {
            domain: [f.basis.domain_lo(), f.basis.domain_hi()],
            order: f.basis.order(),
            interior_knots: f.basis.interior_knots().to_vec(),
            coefficients: f.coefficients,
        }
    }
}

impl TryFrom<SplineRepr> for SplineFunction {
    type Error = Error;

    fn try_from(r: SplineRepr) -> Result<Self> {
        let basis =
            BasisSpec::with_interior_knots(r.domain[0], r.domain[1], &r.interior_knots, r.order)?;
        SplineFunction::new(basis, r.coefficients)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn degenerate_indicator_basis() {
        let b = BasisSpec::uniform(0.0, 1.0, 0, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.eval(0.3, 0).unwrap(), vec![1.0]);
        assert_eq!(b.eval(1.0, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn cubic_with_four_interior_knots() {
        let b = BasisSpec::uniform(0.0, 1.0, 4, 4).unwrap();
        assert_eq!(b.len(), 8);
        let expect = [0.2, 0.4, 0.6, 0.8];
        for (got, want) in b.interior_knots().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_hat_basis() {
        let b = BasisSpec::uniform(0.0, 1.0, 1, 2).unwrap();
        assert_eq!(b.len(), 3);
        // Hats peak at 0, 0.5, 1.
        assert_eq!(b.eval(0.0, 0).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(b.eval(0.5, 0).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(b.eval(1.0, 0).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(BasisSpec::uniform(0.0, 1.0, 2, 0).is_err());
        assert!(BasisSpec::uniform(1.0, 0.0, 2, 4).is_err());
        assert!(BasisSpec::with_interior_knots(0.0, 1.0, &[1.5], 4).is_err());
    }

    #[test]
    fn order_one_indicators() {
        let b = BasisSpec::uniform(0.0, 1.0, 1, 1).unwrap();
        assert_eq!(b.eval(0.25, 0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(b.eval(0.75, 0).unwrap(), vec![0.0, 1.0]);
        assert!(b.eval(0.25, 1).is_err());
        assert!(b.eval(1.25, 0).is_err());
    }

    #[test]
    fn bernstein_cubics_at_half() {
        // Order-4 basis with no interior knots is the Bernstein cubic basis:
        // (1-x)^3, 3x(1-x)^2, 3x^2(1-x), x^3.
        let b = BasisSpec::uniform(0.0, 1.0, 0, 4).unwrap();
        let vals = b.eval(0.5, 0).unwrap();
        let expect = [0.125, 0.375, 0.375, 0.125];
        for (v, e) in vals.iter().zip(expect) {
            assert!((v - e).abs() < 1e-14);
        }
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = SplitMix64::new(11);
        for &(ik, order) in &[(0usize, 1usize), (3, 2), (4, 4), (7, 5), (2, 6)] {
            let b = BasisSpec::uniform(-0.5, 2.0, ik, order).unwrap();
            for _ in 0..1000 {
                let x = rng.next_range(-0.5, 2.0);
                let s: f64 = b.eval(x, 0).unwrap().iter().sum();
                assert!((s - 1.0).abs() <= 1e-12, "sum {s} at {x}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let b = BasisSpec::uniform(0.0, 1.0, 4, 4).unwrap();
        let mut rng = SplitMix64::new(5);
        let h = 1e-6;
        for _ in 0..200 {
            // Stay away from knots and the boundary.
            let x = 0.05 + 0.02 * rng.next_f64();
            let d1 = b.eval(x, 1).unwrap();
            let up = b.eval(x + h, 0).unwrap();
            let dn = b.eval(x - h, 0).unwrap();
            for i in 0..b.len() {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                assert!(
                    (d1[i] - fd).abs() <= 1e-6 * (1.0 + d1[i].abs()),
                    "basis {i} at {x}: {} vs {fd}",
                    d1[i]
                );
            }
        }
    }

    #[test]
    fn gram_of_indicator_basis_is_diagonal() {
        let b = BasisSpec::uniform(0.0, 1.0, 1, 1).unwrap();
        let g = b.gram(0).unwrap();
        assert!((g[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((g[(1, 1)] - 0.5).abs() < 1e-15);
        assert!(g[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn gram_of_hat_derivatives_is_tridiagonal() {
        // Hat derivatives are piecewise +-2 on spans of width 0.5.
        let b = BasisSpec::uniform(0.0, 1.0, 1, 2).unwrap();
        let g = b.gram(1).unwrap();
        let expect = [[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[(i, j)] - expect[i][j]).abs() < 1e-13, "({i},{j})");
            }
        }
    }

    #[test]
    fn constant_spline_evaluates_and_differentiates() {
        let b = BasisSpec::uniform(0.0, 1.0, 3, 4).unwrap();
        let f = SplineFunction::constant(b, 2.5);
        let mut rng = SplitMix64::new(1);
        for _ in 0..50 {
            let x = rng.next_f64();
            assert!((f.eval(x, 0).unwrap() - 2.5).abs() < 1e-14);
            assert!(f.eval(x, 1).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn identity_spline_reproduces_argument() {
        let b = BasisSpec::uniform(-1.0, 3.0, 5, 4).unwrap();
        let f = SplineFunction::identity(b).unwrap();
        let mut rng = SplitMix64::new(2);
        for _ in 0..50 {
            let x = rng.next_range(-1.0, 3.0);
            assert!((f.eval(x, 0).unwrap() - x).abs() < 1e-13);
            assert!((f.eval(x, 1).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_reparam_identity_is_noop() {
        let b = BasisSpec::uniform(0.0, 1.0, 3, 4).unwrap();
        let mut rng = SplitMix64::new(3);
        let coeffs: Vec<f64> = (0..b.len()).map(|_| rng.next_normal()).collect();
        let f = SplineFunction::new(b, coeffs).unwrap();
        let g = f.affine_reparam(1.0, 0.0).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn affine_reparam_maps_domain() {
        let b = BasisSpec::uniform(0.0, 1.0, 3, 4).unwrap();
        let mut rng = SplitMix64::new(4);
        let coeffs: Vec<f64> = (0..b.len()).map(|_| rng.next_normal()).collect();
        let f = SplineFunction::new(b, coeffs).unwrap();
        let g = f.affine_reparam(2.0, 0.0).unwrap();
        assert!((g.basis().domain_hi() - 0.5).abs() < 1e-15);
        assert!((g.eval(0.25, 0).unwrap() - f.eval(0.5, 0).unwrap()).abs() < 1e-13);
        assert!(f.affine_reparam(0.0, 0.1).is_err());
        assert!(f.affine_reparam(-2.0, 0.1).is_err());
    }

    #[test]
    fn reflect_composes_with_negation() {
        let b = BasisSpec::uniform(-0.3, 1.2, 4, 4).unwrap();
        let mut rng = SplitMix64::new(6);
        let coeffs: Vec<f64> = (0..b.len()).map(|_| rng.next_normal()).collect();
        let f = SplineFunction::new(b, coeffs).unwrap();
        let g = f.reflect();
        for _ in 0..100 {
            let x = rng.next_range(-0.3, 1.2);
            assert!((g.eval(-x, 0).unwrap() - f.eval(x, 0).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn projection_is_idempotent_on_own_basis() {
        let b = BasisSpec::uniform(0.0, 1.0, 4, 4).unwrap();
        let mut rng = SplitMix64::new(7);
        let coeffs: Vec<f64> = (0..b.len()).map(|_| rng.next_normal()).collect();
        let f = SplineFunction::new(b.clone(), coeffs).unwrap();
        let g = SplineFunction::project_onto_basis(|x| f.eval(x, 0).unwrap(), &b).unwrap();
        for (a, c) in f.coefficients().iter().zip(g.coefficients()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_of_zero_is_zero() {
        let b = BasisSpec::uniform(0.0, 1.0, 4, 4).unwrap();
        let g = SplineFunction::project_onto_basis(|_| 0.0, &b).unwrap();
        for c in g.coefficients() {
            assert!(c.abs() < 1e-14);
        }
    }

    #[test]
    fn projection_represents_quadratic_exactly() {
        let b = BasisSpec::uniform(0.0, 1.0, 3, 4).unwrap();
        let g = SplineFunction::project_onto_basis(|x| x * x, &b).unwrap();
        let rule = GaussLegendre::new(8);
        let resid = rule.integrate(0.0, 1.0, |x| {
            let d = g.eval(x, 0).unwrap() - x * x;
            d * d
        });
        assert!(resid <= 1e-10, "residual {resid}");
    }

    #[test]
    fn natural_interpolant_of_two_points_is_the_line() {
        let f = SplineFunction::natural_interpolant(&[(0.0, 1.0), (1.0, 3.0)], 2).unwrap();
        for &x in &[0.0, 0.25, 0.5, 0.9, 1.0] {
            assert!((f.eval(x, 0).unwrap() - (1.0 + 2.0 * x)).abs() < 1e-9);
        }
        let penalty = f.squared_seminorm(2).unwrap();
        assert!(penalty.abs() < 1e-9, "penalty {penalty}");
    }

    #[test]
    fn natural_interpolant_reproduces_low_degree_polynomials() {
        // Samples of a degree-(k-1) polynomial have a zero-penalty interpolant.
        let poly = |x: f64| 0.5 - 1.3 * x;
        let pts: Vec<(f64, f64)> = [0.0, 0.2, 0.45, 0.7, 1.0]
            .iter()
            .map(|&x| (x, poly(x)))
            .collect();
        let f = SplineFunction::natural_interpolant(&pts, 2).unwrap();
        assert!(f.squared_seminorm(2).unwrap() < 1e-10);
        for &x in &[0.1, 0.33, 0.61, 0.95] {
            assert!((f.eval(x, 0).unwrap() - poly(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn natural_interpolant_rejects_conflicts_and_scarcity() {
        assert!(SplineFunction::natural_interpolant(&[(0.5, 1.0)], 2).is_err());
        assert!(
            SplineFunction::natural_interpolant(&[(0.0, 1.0), (0.0, 2.0), (1.0, 0.0)], 2).is_err()
        );
        // Duplicates with agreeing ordinates collapse.
        assert!(
            SplineFunction::natural_interpolant(&[(0.0, 1.0), (0.0, 1.0), (1.0, 0.0)], 2).is_ok()
        );
    }

    #[test]
    fn serde_round_trip_is_value_exact() {
        let b = BasisSpec::uniform(-0.25, 1.75, 5, 4).unwrap();
        let mut rng = SplitMix64::new(9);
        let coeffs: Vec<f64> = (0..b.len()).map(|_| rng.next_normal() * 1e3).collect();
        let f = SplineFunction::new(b, coeffs).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let g: SplineFunction = serde_json::from_str(&json).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn clamped_evaluation_reports_distance() {
        let b = BasisSpec::uniform(0.0, 1.0, 2, 4).unwrap();
        let f = SplineFunction::identity(b).unwrap();
        let (v, d) = f.eval_clamped(1.5);
        assert!((v - 1.0).abs() < 1e-13);
        assert!((d - 0.5).abs() < 1e-15);
        let (v, d) = f.eval_clamped(0.5);
        assert!((v - 0.5).abs() < 1e-13);
        assert_eq!(d, 0.0);
    }
}
