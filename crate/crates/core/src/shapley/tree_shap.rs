//! Polynomial-time exact Shapley values for a single tree.
//!
//! Walks every root-to-leaf path once while tracking, for each unique feature
//! on the path, the fraction of cover that flows through when the feature is
//! absent (`zero`) or present (`one`), together with the permutation weights
//! of each subset size. Cost is O(leaves * depth^2).

use std::time::Instant;

use crate::error::{Error, Result};
use crate::models::tree::{DecisionTree, NodeKind};
use crate::shapley::brute::conditional;
use crate::shapley::explanation::{default_names, ShapExplanation};

const NO_FEATURE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: usize,
    zero: f64,
    one: f64,
    pweight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: usize) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one * path[i].pweight * (i + 1) as f64 / denom;
        path[i].pweight = zero * path[i].pweight * (depth - i) as f64 / denom;
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let PathElement { zero, one, .. } = path[index];
    let denom = (depth + 1) as f64;
    let mut next = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next * denom / ((i + 1) as f64 * one);
            next = tmp - path[i].pweight * zero * (depth - i) as f64 / denom;
        } else {
            path[i].pweight = path[i].pweight * denom / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

/// Total permutation weight the path would carry with element `index` removed.
fn unwound_path_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElement { zero, one, .. } = path[index];
    let denom = (depth + 1) as f64;
    let mut next = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * denom / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].pweight - tmp * zero * (depth - i) as f64 / denom;
        } else {
            total += path[i].pweight / zero * denom / (depth - i) as f64;
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &DecisionTree,
    x: &[f64],
    phi: &mut [f64],
    id: usize,
    mut path: Vec<PathElement>,
    zero: f64,
    one: f64,
    feature: usize,
) {
    extend_path(&mut path, zero, one, feature);
    let node = &tree.nodes[id];
    match node.kind {
        NodeKind::Leaf => {
            for i in 1..path.len() {
                let w = unwound_path_sum(&path, i);
                let el = path[i];
                phi[el.feature] += w * (el.one - el.zero) * node.value;
            }
        }
        NodeKind::Internal {
            feature: split,
            threshold,
            left,
            right,
        } => {
            let (hot, cold) = if x[split] <= threshold {
                (left, right)
            } else {
                (right, left)
            };
            let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == split) {
                incoming_zero = path[k].zero;
                incoming_one = path[k].one;
                unwind_path(&mut path, k);
            }
            let hot_zero = tree.nodes[hot].cover / node.cover * incoming_zero;
            let cold_zero = tree.nodes[cold].cover / node.cover * incoming_zero;
            recurse(tree, x, phi, hot, path.clone(), hot_zero, incoming_one, split);
            recurse(tree, x, phi, cold, path, cold_zero, 0.0, split);
        }
    }
}

/// Shapley values of the path-dependent value function; no dimension check.
pub fn tree_shap_values(tree: &DecisionTree, x: &[f64]) -> Vec<f64> {
    let mut phi = vec![0.0; tree.n_features];
    let capacity = tree.depth() + 2;
    recurse(
        tree,
        x,
        &mut phi,
        tree.root,
        Vec::with_capacity(capacity),
        1.0,
        1.0,
        NO_FEATURE,
    );
    phi
}

/// Exact Shapley explanation of one tree at `x`.
pub fn tree_shap(tree: &DecisionTree, x: &[f64]) -> Result<ShapExplanation> {
    if x.len() != tree.n_features {
        return Err(Error::DimensionMismatch {
            expected: tree.n_features,
            got: x.len(),
        });
    }
    let start = Instant::now();
    let phi = tree_shap_values(tree, x);
    Ok(ShapExplanation {
        explainer: "treeshap".into(),
        base_value: conditional(tree, x, 0, tree.root),
        fx: tree.nodes[tree.leaf_of(x)].value,
        phi,
        feature_names: default_names(tree.n_features),
        instance: x.to_vec(),
        class_index: None,
        elapsed_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    })
}
