//! Nested composition models.
//!
//! The regression function is a tree of univariate splines: leaves read
//! covariates, every internal node maps the sum of its children, and the
//! root maps the sum of the first layer,
//! `y = m[Σ_{l1} m_{l1}(Σ_{l2} m_{l1,l2}(...))] + u`. Two different leaves
//! may read the same covariate column. Only the root carries the penalty
//! `λ² [T_1²(m) + c T_k²(m)]^ν`; every other sibling group is constrained to
//! unit combined smoothness norm, which pins the scales layer by layer.

mod fit;

pub use fit::{fit_nested, NestedFitResult};

pub(crate) use fit::fit_nested_with_loss;

use crate::error::{Error, Result};
use crate::gam::PointEval;
use crate::penalty::t_l_squared;
use crate::spline::SplineFunction;
use serde::{Deserialize, Serialize};

/// Architecture of a nested model: layer widths, the leaf-to-covariate map,
/// and the penalty constants.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    widths: Vec<usize>,
    /// Covariate column per leaf, flat in path-major order.
    leaf_map: Vec<usize>,
    /// Outer penalty weight c on T_k²(root).
    pub outer_weight: f64,
    /// Outer penalty exponent ν.
    pub outer_exponent: f64,
    /// Smoothness order k.
    pub k: usize,
    /// Per-node T_k weights, one vector per layer in path-major order.
    node_weights: Vec<Vec<f64>>,
}

impl NetworkSpec {
    /// Uniform-weight spec: depth = widths.len(), all node weights 1.
    pub fn new(widths: Vec<usize>, leaf_map: Vec<usize>, k: usize) -> Result<Self> {
        let node_weights = layer_sizes(&widths)
            .into_iter()
            .map(|sz| vec![1.0; sz])
            .collect();
        let spec = Self {
            widths,
            leaf_map,
            outer_weight: 1.0,
            outer_exponent: 1.0,
            k,
            node_weights,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_outer(mut self, c: f64, nu: f64) -> Self {
        self.outer_weight = c;
        self.outer_exponent = nu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::InvalidConfig("network needs depth >= 1".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let leaves: usize = self.widths.iter().product();
        if self.leaf_map.len() != leaves {
            return Err(Error::InvalidConfig(format!(
                "leaf map has {} entries, expected {leaves}",
                self.leaf_map.len()
            )));
        }
        if self.k < 2 {
            return Err(Error::InvalidConfig("smoothness order k must be >= 2".into()));
        }
        if !(self.outer_weight > 0.0 && self.outer_exponent > 0.0) {
            return Err(Error::InvalidConfig(
                "outer penalty constants must be positive".into(),
            ));
        }
        let sizes = layer_sizes(&self.widths);
        if self.node_weights.len() != sizes.len()
            || self
                .node_weights
                .iter()
                .zip(&sizes)
                .any(|(w, &s)| w.len() != s)
        {
            return Err(Error::InvalidConfig("node weight shape mismatch".into()));
        }
        if self
            .node_weights
            .iter()
            .flatten()
            .any(|&w| !(w > 0.0 && w.is_finite()))
        {
            return Err(Error::InvalidConfig("node weights must be positive".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn leaf_column(&self, leaf_idx: usize) -> usize {
        self.leaf_map[leaf_idx]
    }

    /// Number of covariate columns the spec requires.
    pub fn required_columns(&self) -> usize {
        self.leaf_map.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// T_k weight for node `idx` in layer `layer` (0-based layer).
    pub fn node_weight(&self, layer: usize, idx: usize) -> f64 {
        self.node_weights[layer][idx]
    }

    pub fn set_node_weight(&mut self, layer: usize, idx: usize, w: f64) {
        self.node_weights[layer][idx] = w;
    }

    /// Node count of layer `layer` (0-based; layer 0 holds the root's children).
    pub fn layer_len(&self, layer: usize) -> usize {
        layer_sizes(&self.widths)[layer]
    }

    /// Flat index range of the children of node `parent` in layer `layer`
    /// (parent = None addresses the root).
    pub fn children(&self, parent: Option<(usize, usize)>) -> (usize, std::ops::Range<usize>) {
        match parent {
            None => (0, 0..self.widths[0]),
            Some((layer, idx)) => {
                let w = self.widths[layer + 1];
                (layer + 1, idx * w..(idx + 1) * w)
            }
        }
    }

    /// Path of a node from its (layer, flat index).
    pub fn path_of(&self, layer: usize, idx: usize) -> Vec<usize> {
        let mut path = vec![0; layer + 1];
        let mut rem = idx;
        for j in (0..=layer).rev() {
            path[j] = rem % self.widths[j];
            rem /= self.widths[j];
        }
        path
    }

    fn flat_index(&self, path: &[usize]) -> Result<(usize, usize)> {
        if path.is_empty() || path.len() > self.depth() {
            return Err(Error::InvalidConfig(format!(
                "path length {} out of range for depth {}",
                path.len(),
                self.depth()
            )));
        }
        let mut idx = 0;
        for (j, &p) in path.iter().enumerate() {
            if p >= self.widths[j] {
                return Err(Error::InvalidConfig(format!(
                    "path entry {p} exceeds layer width {}",
                    self.widths[j]
                )));
            }
            idx = idx * self.widths[j] + p;
        }
        Ok((path.len() - 1, idx))
    }
}

fn layer_sizes(widths: &[usize]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(widths.len());
    let mut acc = 1usize;
    for &w in widths {
        acc *= w;
        sizes.push(acc);
    }
    sizes
}

#[derive(Serialize, Deserialize)]
struct CPathEntry {
    path: Vec<usize>,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct NetworkSpecRepr {
    depth: usize,
    widths: Vec<usize>,
    /// Entries `[l1, ..., lp, column]`, all indices 0-based.
    leaf_map: Vec<Vec<usize>>,
    c: f64,
    #[serde(default)]
    c_path: Vec<CPathEntry>,
    nu: f64,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    2
}

impl Serialize for NetworkSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let depth = self.depth();
        let leaves = self.layer_len(depth - 1);
        let leaf_map = (0..leaves)
            .map(|i| {
                let mut e = self.path_of(depth - 1, i);
                e.push(self.leaf_map[i]);
                e
            })
            .collect();
        let mut c_path = Vec::new();
        for (layer, ws) in self.node_weights.iter().enumerate() {
            for (idx, &w) in ws.iter().enumerate() {
                if w != 1.0 {
                    c_path.push(CPathEntry {
                        path: self.path_of(layer, idx),
                        weight: w,
                    });
                }
            }
        }
        NetworkSpecRepr {
            depth,
            widths: self.widths.clone(),
            leaf_map,
            c: self.outer_weight,
            c_path,
            nu: self.outer_exponent,
            k: self.k,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetworkSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = NetworkSpecRepr::deserialize(d)?;
        if repr.depth != repr.widths.len() {
            return Err(serde::de::Error::custom(format!(
                "depth {} does not match widths length {}",
                repr.depth,
                repr.widths.len()
            )));
        }
        let leaves: usize = repr.widths.iter().product();
        let mut leaf_map = vec![usize::MAX; leaves];
        let mut spec = NetworkSpec::new(repr.widths, vec![0; leaves], repr.k)
            .map_err(serde::de::Error::custom)?;
        spec.outer_weight = repr.c;
        spec.outer_exponent = repr.nu;
        for entry in &repr.leaf_map {
            if entry.len() != spec.depth() + 1 {
                return Err(serde::de::Error::custom(format!(
                    "leaf map entry {entry:?} must hold a full path plus a column"
                )));
            }
            let (layer, idx) = spec
                .flat_index(&entry[..spec.depth()])
                .map_err(serde::de::Error::custom)?;
            debug_assert_eq!(layer, spec.depth() - 1);
            leaf_map[idx] = entry[spec.depth()];
        }
        if leaf_map.iter().any(|&c| c == usize::MAX) {
            return Err(serde::de::Error::custom("leaf map does not cover all leaves"));
        }
        spec.leaf_map = leaf_map;
        for entry in &repr.c_path {
            let (layer, idx) = spec
                .flat_index(&entry.path)
                .map_err(serde::de::Error::custom)?;
            spec.node_weights[layer][idx] = entry.weight;
        }
        spec.validate().map_err(serde::de::Error::custom)?;
        Ok(spec)
    }
}

/// A fitted nested model: root spline plus one spline per node, stored per
/// layer in path-major order.
#[derive(Debug, Clone)]
pub struct NestedModel {
    pub spec: NetworkSpec,
    pub root: SplineFunction,
    pub layers: Vec<Vec<SplineFunction>>,
}

impl NestedModel {
    /// Bottom-up evaluation with clamping at every node domain; the clamp
    /// distance accumulates everything that had to be clamped.
    pub fn evaluate(&self, x: &[f64]) -> PointEval {
        let depth = self.spec.depth();
        let mut clamp = 0.0;
        // Values of the current layer, deepest first.
        let mut values: Vec<f64> = self.layers[depth - 1]
            .iter()
            .enumerate()
            .map(|(i, leaf)| {
                let (v, d) = leaf.eval_clamped(x[self.spec.leaf_column(i)]);
                clamp += d;
                v
            })
            .collect();
        for layer in (0..depth - 1).rev() {
            let w = self.spec.widths()[layer + 1];
            values = self.layers[layer]
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    let s: f64 = values[i * w..(i + 1) * w].iter().sum();
                    let (v, d) = node.eval_clamped(s);
                    clamp += d;
                    v
                })
                .collect();
        }
        let s: f64 = values.iter().sum();
        let (value, d) = self.root.eval_clamped(s);
        PointEval {
            value,
            clamp_distance: clamp + d,
        }
    }

    /// Root input value (the outermost sum) for a point.
    pub fn root_input(&self, x: &[f64]) -> f64 {
        let depth = self.spec.depth();
        let mut values: Vec<f64> = self.layers[depth - 1]
            .iter()
            .enumerate()
            .map(|(i, leaf)| leaf.eval_clamped(x[self.spec.leaf_column(i)]).0)
            .collect();
        for layer in (0..depth - 1).rev() {
            let w = self.spec.widths()[layer + 1];
            values = self.layers[layer]
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    let s: f64 = values[i * w..(i + 1) * w].iter().sum();
                    node.eval_clamped(s).0
                })
                .collect();
        }
        values.iter().sum()
    }
}

/// One sibling group's deviation from the unit-norm constraint.
#[derive(Debug, Clone)]
pub struct BranchNorm {
    /// Path of the parent node; empty for the root's children.
    pub parent_path: Vec<usize>,
    /// `|Σ_children (T_1² + c T_k²) - 1|`.
    pub residual: f64,
}

/// Per-branch residuals of the layer norm constraints.
pub fn check_layer_norms(model: &NestedModel) -> Result<Vec<BranchNorm>> {
    let spec = &model.spec;
    let mut out = Vec::new();
    let mut parents: Vec<Option<(usize, usize)>> = vec![None];
    for layer in 0..spec.depth() - 1 {
        for idx in 0..spec.layer_len(layer) {
            parents.push(Some((layer, idx)));
        }
    }
    for parent in parents {
        let (layer, range) = spec.children(parent);
        let mut total = 0.0;
        for idx in range {
            let m = &model.layers[layer][idx];
            let w = spec.node_weight(layer, idx);
            total += t_l_squared(m, 1)? + w * t_l_squared(m, spec.k)?;
        }
        out.push(BranchNorm {
            parent_path: match parent {
                None => Vec::new(),
                Some((layer, idx)) => spec.path_of(layer, idx),
            },
            residual: (total - 1.0).abs(),
        });
    }
    Ok(out)
}

/// Penalized objective `(1/n) Σ r² + λ² [T_1²(root) + c T_k²(root)]^ν`.
/// Errors if any branch norm deviates from 1 by more than 1e-6 (the model
/// must be normalized before its objective is meaningful).
pub fn nested_objective(model: &NestedModel, data: &crate::gam::Dataset, lambda: f64) -> Result<f64> {
    let norms = check_layer_norms(model)?;
    if let Some(bad) = norms.iter().find(|b| b.residual > 1e-6) {
        return Err(Error::InvalidData(format!(
            "branch at {:?} violates the unit norm constraint by {}",
            bad.parent_path, bad.residual
        )));
    }
    Ok(raw_nested_objective(model, data, lambda)?)
}

/// The same objective without the norm check (used inside the optimizer,
/// which maintains the constraint itself).
pub(crate) fn raw_nested_objective(
    model: &NestedModel,
    data: &crate::gam::Dataset,
    lambda: f64,
) -> Result<f64> {
    let n = data.n();
    let mut rss = 0.0;
    for i in 0..n {
        let r = data.y()[i] - model.evaluate(data.row(i)).value;
        rss += r * r;
    }
    Ok(rss / n as f64 + lambda * lambda * root_penalty(model)?)
}

/// `[T_1²(root) + c T_k²(root)]^ν`.
pub fn root_penalty(model: &NestedModel) -> Result<f64> {
    let spec = &model.spec;
    let base =
        t_l_squared(&model.root, 1)? + spec.outer_weight * t_l_squared(&model.root, spec.k)?;
    Ok(base.max(0.0).powf(spec.outer_exponent))
}

/// Tree-shaped serialization of a fitted model.
#[derive(Serialize, Deserialize)]
struct NodeTree {
    function: SplineFunction,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<NodeTree>,
}

#[derive(Serialize, Deserialize)]
struct NestedModelRepr {
    spec: NetworkSpec,
    root: NodeTree,
}

impl Serialize for NestedModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        fn subtree(model: &NestedModel, layer: usize, idx: usize) -> NodeTree {
            let children = if layer + 1 < model.spec.depth() {
                let (cl, range) = model.spec.children(Some((layer, idx)));
                range.map(|i| subtree(model, cl, i)).collect()
            } else {
                Vec::new()
            };
            NodeTree {
                function: model.layers[layer][idx].clone(),
                children,
            }
        }
        let root = NodeTree {
            function: self.root.clone(),
            children: (0..self.spec.widths()[0])
                .map(|i| subtree(self, 0, i))
                .collect(),
        };
        NestedModelRepr {
            spec: self.spec.clone(),
            root,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NestedModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = NestedModelRepr::deserialize(d)?;
        let spec = repr.spec;
        let mut layers: Vec<Vec<Option<SplineFunction>>> = (0..spec.depth())
            .map(|l| vec![None; spec.layer_len(l)])
            .collect();
        fn walk<E: serde::de::Error>(
            spec: &NetworkSpec,
            layers: &mut [Vec<Option<SplineFunction>>],
            node: &NodeTree,
            layer: usize,
            idx: usize,
        ) -> std::result::Result<(), E> {
            let expected = if layer + 1 < spec.depth() {
                spec.widths()[layer + 1]
            } else {
                0
            };
            if node.children.len() != expected {
                return Err(E::custom(format!(
                    "node at layer {layer} has {} children, expected {expected}",
                    node.children.len()
                )));
            }
            layers[layer][idx] = Some(node.function.clone());
            for (t, child) in node.children.iter().enumerate() {
                let (cl, range) = spec.children(Some((layer, idx)));
                walk(spec, layers, child, cl, range.start + t)?;
            }
            Ok(())
        }
        if repr.root.children.len() != spec.widths()[0] {
            return Err(serde::de::Error::custom("root child count mismatch"));
        }
        for (i, child) in repr.root.children.iter().enumerate() {
            walk(&spec, &mut layers, child, 0, i)?;
        }
        let layers: Vec<Vec<SplineFunction>> = layers
            .into_iter()
            .map(|l| l.into_iter().map(|n| n.expect("tree covers all nodes")).collect())
            .collect();
        Ok(NestedModel {
            spec,
            root: repr.root.function,
            layers,
        })
    }
}
