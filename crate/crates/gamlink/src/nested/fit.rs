//! Cyclic coordinate descent for nested models.
//!
//! Each sweep walks the node layers deepest first (leaves, then their
//! parents, and so on) and updates the root last, so the most influential
//! node always sees fresh linearizations of everything below it. A non-root
//! node update linearizes all of its ancestors around the current values and
//! minimizes the induced quadratic subject to its sibling group's norm
//! constraint, re-projected through the scalar-multiplier method; the root
//! update mirrors the link update of the additive model. Every update is
//! guarded by step halving on the exact objective, so the trace is
//! non-increasing.
//!
//! Leaf domains are the unit interval. Interior node domains are fixed up
//! front from the recursion bound: a node whose children are anchored with
//! unit-norm smoothness can produce summed inputs no larger than the layer
//! width times the child value bound, and anchoring plus the norm constraint
//! bounds each node's own values on that domain.

use super::{raw_nested_objective, NestedModel, NetworkSpec};
use crate::error::{Error, Result};
use crate::gam::{Dataset, FitConfig};
use crate::loss::{ResidualLoss, SquaredLoss};
use crate::solve::{constrained_quadratic_min, penalized_least_squares_mm, PowerPenaltyTerm};
use crate::spline::{BasisSpec, SplineFunction};
use nalgebra::{DMatrix, DVector};

/// Outcome of a nested fit.
#[derive(Debug, Clone)]
pub struct NestedFitResult {
    pub model: NestedModel,
    pub objective_trace: Vec<f64>,
    /// Final root penalty `[T_1² + c T_k²]^ν`.
    pub j_value: f64,
    pub converged: bool,
    pub sweeps_used: usize,
    pub final_objective: f64,
}

struct NodeBlock {
    basis: BasisSpec,
    /// Reduced Ω_1 + w Ω_k (first coefficient anchored to zero).
    q: DMatrix<f64>,
    coeffs: DVector<f64>,
}

impl NodeBlock {
    fn spline(&self) -> SplineFunction {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(0.0);
        coeffs.extend(self.coeffs.iter());
        SplineFunction::new(self.basis.clone(), coeffs).expect("coefficient count matches")
    }

    fn norm_contribution(&self) -> f64 {
        (&self.q * &self.coeffs).dot(&self.coeffs)
    }
}

struct Forward {
    /// Per layer: n x layer_len node input values.
    inputs: Vec<DMatrix<f64>>,
    /// Per layer: n x layer_len node output values.
    values: Vec<DMatrix<f64>>,
    /// Root inputs, length n.
    root_input: DVector<f64>,
}

struct NestedFitter<'a, L: ResidualLoss> {
    data: &'a Dataset,
    spec: &'a NetworkSpec,
    cfg: &'a FitConfig,
    loss: L,
    nodes: Vec<Vec<NodeBlock>>,
    root: SplineFunction,
    root_gram: DMatrix<f64>,
}

fn reduced(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.view((1, 1), (m.nrows() - 1, m.ncols() - 1)).into_owned()
}

impl<'a, L: ResidualLoss> NestedFitter<'a, L> {
    fn init(data: &'a Dataset, spec: &'a NetworkSpec, cfg: &'a FitConfig, loss: L) -> Result<Self> {
        let depth = spec.depth();
        let order = cfg.order();

        // Value bound recursion fixes interior domains.
        let mut input_width = vec![0.0f64; depth];
        let mut value_bound = vec![0.0f64; depth];
        value_bound[depth - 1] = 1.0;
        for layer in (0..depth - 1).rev() {
            input_width[layer] = spec.widths()[layer + 1] as f64 * value_bound[layer + 1];
            value_bound[layer] = (2.0 * input_width[layer]).sqrt();
        }

        let n = data.n() as f64;
        let ybar = data.y().iter().sum::<f64>() / n;
        let mut nodes: Vec<Vec<NodeBlock>> = Vec::with_capacity(depth);
        for layer in 0..depth {
            let count = spec.layer_len(layer);
            let basis = if layer == depth - 1 {
                BasisSpec::uniform(0.0, 1.0, cfg.m_interior_knots, order)?
            } else {
                let w = input_width[layer];
                BasisSpec::uniform(-w, w, cfg.m_interior_knots, order)?
            };
            let gram1 = reduced(&basis.gram(1)?);
            let gramk = reduced(&basis.gram(spec.k)?);
            let greville = basis.greville();
            let mut layer_nodes = Vec::with_capacity(count);
            for idx in 0..count {
                let w_node = spec.node_weight(layer, idx);
                let q = &gram1 + w_node * &gramk;
                layer_nodes.push(NodeBlock {
                    basis: basis.clone(),
                    q,
                    coeffs: DVector::zeros(greville.len() - 1),
                });
            }
            nodes.push(layer_nodes);
        }

        // Leaves: marginal slopes, normalized per sibling group.
        {
            let layer = depth - 1;
            let count = spec.layer_len(layer);
            let greville = nodes[layer][0].basis.greville();
            let mut slopes = vec![0.0f64; count];
            for (idx, slope) in slopes.iter_mut().enumerate() {
                let col = data.column(spec.leaf_column(idx));
                let xbar = col.iter().sum::<f64>() / n;
                let mut sxx = 0.0;
                let mut sxy = 0.0;
                for (i, &xv) in col.iter().enumerate() {
                    sxx += (xv - xbar) * (xv - xbar);
                    sxy += (xv - xbar) * (data.y()[i] - ybar);
                }
                *slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            }
            let group = if depth == 1 { 1 } else { spec.layer_len(depth - 2) };
            let per = count / group;
            for g in 0..group {
                let range = g * per..(g + 1) * per;
                let s: f64 = slopes[range.clone()].iter().map(|b| b * b).sum();
                let scale = if s > 1e-24 {
                    1.0 / s.sqrt()
                } else {
                    slopes[range.start] = 1.0;
                    1.0
                };
                for idx in range {
                    let b = slopes[idx] * scale;
                    for (t, &gv) in greville.iter().skip(1).enumerate() {
                        nodes[layer][idx].coeffs[t] = b * gv;
                    }
                }
            }
        }

        // Interior layers: anchored identity ramps scaled to the group norm.
        for layer in 0..depth.saturating_sub(1) {
            let w = input_width[layer];
            let siblings = spec.widths()[layer] as f64;
            let slope = 1.0 / (2.0 * w * siblings).sqrt();
            let greville = nodes[layer][0].basis.greville();
            for idx in 0..spec.layer_len(layer) {
                for (t, &gv) in greville.iter().skip(1).enumerate() {
                    nodes[layer][idx].coeffs[t] = slope * (gv + w);
                }
            }
        }

        // Root: identity on the induced input range.
        let mut fitter = NestedFitter {
            data,
            spec,
            cfg,
            loss,
            nodes,
            root: SplineFunction::identity(BasisSpec::uniform(-1.0, 1.0, 1, order)?)?,
            root_gram: DMatrix::zeros(0, 0),
        };
        let fw = fitter.forward();
        let zmin = fw.root_input.min();
        let zmax = fw.root_input.max();
        let (zmin, zmax) = if zmax - zmin > 1e-12 {
            (zmin, zmax)
        } else {
            (zmin - 0.5, zmax + 0.5)
        };
        let pad = cfg.f_domain_padding * (zmax - zmin);
        let rb = BasisSpec::uniform(
            zmin - pad,
            zmax + pad.max(1e-12),
            cfg.f_interior_knots,
            order,
        )?;
        fitter.root_gram = root_penalty_gram(&rb, spec)?;
        fitter.root = SplineFunction::identity(rb)?;
        Ok(fitter)
    }

    fn forward(&self) -> Forward {
        let depth = self.spec.depth();
        let n = self.data.n();
        let mut inputs = Vec::with_capacity(depth);
        let mut values = Vec::with_capacity(depth);
        for layer in 0..depth {
            let count = self.spec.layer_len(layer);
            inputs.push(DMatrix::zeros(n, count));
            values.push(DMatrix::zeros(n, count));
        }
        // Leaves.
        let leaf_layer = depth - 1;
        let splines: Vec<SplineFunction> = self.nodes[leaf_layer]
            .iter()
            .map(|b| b.spline())
            .collect();
        for idx in 0..self.spec.layer_len(leaf_layer) {
            let col = self.spec.leaf_column(idx);
            for i in 0..n {
                let x = self.data.x(i, col);
                inputs[leaf_layer][(i, idx)] = x;
                values[leaf_layer][(i, idx)] = splines[idx].eval_clamped(x).0;
            }
        }
        // Interior, bottom-up.
        for layer in (0..depth - 1).rev() {
            let splines: Vec<SplineFunction> =
                self.nodes[layer].iter().map(|b| b.spline()).collect();
            let w = self.spec.widths()[layer + 1];
            for idx in 0..self.spec.layer_len(layer) {
                for i in 0..n {
                    let mut s = 0.0;
                    for t in 0..w {
                        s += values[layer + 1][(i, idx * w + t)];
                    }
                    inputs[layer][(i, idx)] = s;
                    values[layer][(i, idx)] = splines[idx].eval_clamped(s).0;
                }
            }
        }
        let mut root_input = DVector::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for idx in 0..self.spec.widths()[0] {
                s += values[0][(i, idx)];
            }
            root_input[i] = s;
        }
        Forward {
            inputs,
            values,
            root_input,
        }
    }

    fn model(&self) -> NestedModel {
        NestedModel {
            spec: self.spec.clone(),
            root: self.root.clone(),
            layers: self
                .nodes
                .iter()
                .map(|layer| layer.iter().map(|b| b.spline()).collect())
                .collect(),
        }
    }

    fn objective(&self) -> f64 {
        let fw = self.forward();
        self.objective_from(&fw.root_input)
    }

    fn objective_from(&self, root_input: &DVector<f64>) -> f64 {
        let n = self.data.n();
        let mut fit = 0.0;
        for i in 0..n {
            let eta = self.root.eval_clamped(root_input[i]).0;
            fit += self.loss.value(self.data.y()[i] - eta);
        }
        fit / n as f64 + self.cfg.lambda * self.cfg.lambda * self.root_j()
    }

    fn root_j(&self) -> f64 {
        let c = DVector::from_column_slice(self.root.coefficients());
        let base = (&self.root_gram * &c).dot(&c).max(0.0);
        base.powf(self.spec.outer_exponent)
    }

    /// Chain weight ∂output/∂(node value) at observation i: the product of
    /// the derivative of every ancestor at its clamped input.
    fn chain_weight(&self, fw: &Forward, layer: usize, idx: usize, i: usize) -> f64 {
        let mut g = self.root.deriv_clamped(fw.root_input[i]);
        let path = self.spec.path_of(layer, idx);
        let mut flat = 0usize;
        for (j, &step) in path.iter().enumerate().take(layer) {
            flat = if j == 0 { step } else { flat * self.spec.widths()[j] + step };
            let node = self.nodes[j][flat].spline();
            g *= node.deriv_clamped(fw.inputs[j][(i, flat)]);
        }
        g
    }

    fn step_node(&mut self, layer: usize, idx: usize) -> bool {
        let n = self.data.n();
        let fw = self.forward();
        // Norm budget left for this node inside its sibling group.
        let parent = if layer == 0 {
            None
        } else {
            Some((layer - 1, idx / self.spec.widths()[layer]))
        };
        let (_, siblings) = self.spec.children(parent);
        let mut rest = 0.0;
        for s in siblings {
            if s != idx {
                rest += self.nodes[layer][s].norm_contribution();
            }
        }
        let target = 1.0 - rest;
        if !(target > 1e-10) {
            return false;
        }

        let m_bound = self.loss.curvature_bound();
        let dim = self.nodes[layer][idx].coeffs.len();
        let mut a = DMatrix::zeros(dim, dim);
        let mut bvec = DVector::zeros(dim);
        let basis = self.nodes[layer][idx].basis.clone();
        let nf = n as f64;
        for i in 0..n {
            let g = self.chain_weight(&fw, layer, idx, i);
            if g == 0.0 {
                continue;
            }
            let s_in = fw.inputs[layer][(i, idx)];
            let (sc, _) = basis.clamp(s_in);
            let (offset, vals) = basis.eval_local(sc, 0).expect("clamped input in domain");
            let v0 = fw.values[layer][(i, idx)];
            let eta = self.root.eval_clamped(fw.root_input[i]).0;
            let resid_slope = self.loss.deriv(self.data.y()[i] - eta) / m_bound;
            let w = 0.5 * m_bound / nf;
            let wg2 = w * g * g;
            let wb = w * g * (g * v0 + resid_slope);
            for (ti, &vi) in vals.iter().enumerate() {
                let ci = offset + ti;
                if ci == 0 || vi == 0.0 {
                    continue;
                }
                bvec[ci - 1] += wb * vi;
                for (tj, &vj) in vals.iter().enumerate() {
                    let cj = offset + tj;
                    if cj >= 1 && vj != 0.0 {
                        a[(ci - 1, cj - 1)] += wg2 * vi * vj;
                    }
                }
            }
        }

        let old = self.nodes[layer][idx].coeffs.clone();
        let q = self.nodes[layer][idx].q.clone();
        let obj0 = self.objective_from(&fw.root_input);
        let candidate = match constrained_quadratic_min(&a, &bvec, &q, target, Some(&old)) {
            Ok(c) => c,
            Err(_) => return false,
        };
        let mut step = 1.0;
        while step >= 1e-12 {
            let trial = &old + step * (&candidate - &old);
            let norm = (&q * &trial).dot(&trial);
            if norm > 0.0 {
                let trial = trial * (target / norm).sqrt();
                self.nodes[layer][idx].coeffs = trial;
                let obj = self.objective();
                if obj <= obj0 + 0.5e-12 * (1.0 + obj0.abs()) {
                    return true;
                }
            }
            step *= 0.5;
        }
        self.nodes[layer][idx].coeffs = old;
        false
    }

    fn step_root(&mut self) -> bool {
        let fw = self.forward();
        let z = &fw.root_input;
        let zmin = z.min();
        let zmax = z.max();
        if !(zmax - zmin > 1e-10) {
            return false;
        }
        let pad = self.cfg.f_domain_padding * (zmax - zmin);
        let basis = match BasisSpec::uniform(
            zmin - pad,
            zmax + pad.max(1e-12),
            self.cfg.f_interior_knots,
            self.cfg.order(),
        ) {
            Ok(b) => b,
            Err(_) => return false,
        };
        let old_root = self.root.clone();
        let projected =
            match SplineFunction::project_onto_basis(|x| old_root.eval_clamped(x).0, &basis) {
                Ok(p) => p,
                Err(_) => return false,
            };
        let gram = match root_penalty_gram(&basis, self.spec) {
            Ok(g) => g,
            Err(_) => return false,
        };

        let n = self.data.n();
        let nb = basis.len();
        let mut design = DMatrix::zeros(n, nb);
        for i in 0..n {
            let (offset, vals) = basis
                .eval_local(z[i], 0)
                .expect("root inputs lie inside the padded domain");
            for (t, &v) in vals.iter().enumerate() {
                design[(i, offset + t)] = v;
            }
        }
        let m_bound = self.loss.curvature_bound();
        let c_proj = DVector::from_column_slice(projected.coefficients());
        let eta0 = &design * &c_proj;
        let mut targets = DVector::zeros(n);
        for i in 0..n {
            let r = self.data.y()[i] - eta0[i];
            targets[i] = eta0[i] + self.loss.deriv(r) / m_bound;
        }
        let weights = DVector::from_element(n, 0.5 * m_bound);
        let terms = vec![PowerPenaltyTerm::new(
            gram.clone(),
            self.cfg.lambda * self.cfg.lambda,
            self.spec.outer_exponent,
        )];
        let coeffs = match penalized_least_squares_mm(
            &design,
            &weights,
            &targets,
            &terms,
            &c_proj,
            self.cfg.mm_floor,
            self.cfg.tol_objective,
            50,
        ) {
            Ok(c) => c,
            Err(_) => return false,
        };
        let candidate = match SplineFunction::new(basis, coeffs.iter().copied().collect()) {
            Ok(s) => s,
            Err(_) => return false,
        };
        let obj0 = self.objective_from(z);
        let saved_root = std::mem::replace(&mut self.root, candidate);
        let saved_gram = std::mem::replace(&mut self.root_gram, gram);
        let obj1 = self.objective_from(z);
        if obj1 <= obj0 + 0.5e-12 * (1.0 + obj0.abs()) {
            true
        } else {
            self.root = saved_root;
            self.root_gram = saved_gram;
            false
        }
    }
}

fn root_penalty_gram(basis: &BasisSpec, spec: &NetworkSpec) -> Result<DMatrix<f64>> {
    Ok(basis.gram(1)? + spec.outer_weight * basis.gram(spec.k)?)
}

/// Penalized fit of a nested model with a caller-supplied loss.
pub(crate) fn fit_nested_with_loss<L: ResidualLoss>(
    data: &Dataset,
    spec: &NetworkSpec,
    cfg: &FitConfig,
    loss: L,
) -> Result<NestedFitResult> {
    cfg.validate()?;
    spec.validate()?;
    if spec.k != cfg.penalty.k {
        return Err(Error::InvalidConfig(format!(
            "network smoothness order {} differs from fit configuration k = {}",
            spec.k, cfg.penalty.k
        )));
    }
    if spec.required_columns() > data.d() {
        return Err(Error::InvalidData(format!(
            "leaf map references column {}, data has {} columns",
            spec.required_columns() - 1,
            data.d()
        )));
    }
    let total_nodes: usize = (0..spec.depth()).map(|l| spec.layer_len(l)).sum();
    if data.n() < total_nodes + 2 {
        return Err(Error::InvalidData(format!(
            "need at least {} observations for {} nodes",
            total_nodes + 2,
            total_nodes
        )));
    }
    let mut fitter = NestedFitter::init(data, spec, cfg, loss)?;
    let mut trace = vec![fitter.objective()];
    let mut converged = false;
    let mut sweeps_used = 0;
    for sweep in 1..=cfg.max_sweeps {
        let mut any_accepted = false;
        for layer in (0..spec.depth()).rev() {
            for idx in 0..spec.layer_len(layer) {
                any_accepted |= fitter.step_node(layer, idx);
            }
        }
        any_accepted |= fitter.step_root();
        let obj = fitter.objective();
        let prev = *trace.last().expect("trace is seeded");
        trace.push(obj);
        sweeps_used = sweep;
        if prev - obj <= cfg.tol_objective * (1.0 + prev.abs()) {
            converged = any_accepted || prev - obj >= 0.0;
            break;
        }
    }
    let model = fitter.model();
    let j_value = fitter.root_j();
    let final_objective = *trace.last().expect("trace nonempty");
    Ok(NestedFitResult {
        model,
        objective_trace: trace,
        j_value,
        converged,
        sweeps_used,
        final_objective,
    })
}

/// Penalized least-squares fit of a nested composition model.
pub fn fit_nested(data: &Dataset, spec: &NetworkSpec, cfg: &FitConfig) -> Result<NestedFitResult> {
    fit_nested_with_loss(data, spec, cfg, SquaredLoss)
}
