//! Exhaustive Shapley values and the path-dependent tree value function.

use crate::error::{Error, Result};
use crate::models::tree::{DecisionTree, NodeKind};
use crate::par;

pub const MAX_ENUMERATION_FEATURES: usize = 24;

/// `v(S)` for coalitions encoded as bitsets (bit `i` set iff feature `i` is in `S`).
pub trait CoalitionValueFn: Sync {
    fn evaluate(&self, coalition: u32) -> f64;
}

impl<F: Fn(u32) -> f64 + Sync> CoalitionValueFn for F {
    fn evaluate(&self, coalition: u32) -> f64 {
        self(coalition)
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut c: u64 = 1;
    for i in 0..k {
        // Exact at every step: c * (n - i) is divisible by (i + 1).
        c = c * (n - i) / (i + 1);
    }
    c
}

/// Exact Shapley values by enumerating all `2^d` coalitions.
///
/// The weight `|s|! (d-|s|-1)! / d!` equals `1 / (d * C(d-1, |s|))`; it is formed
/// from exact integers and rounded once.
pub fn shapley_brute_force(v: &dyn CoalitionValueFn, d: usize) -> Result<Vec<f64>> {
    if d > MAX_ENUMERATION_FEATURES {
        return Err(Error::TooManyFeatures {
            d,
            max: MAX_ENUMERATION_FEATURES,
        });
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    let n_sets = 1usize << d;
    let values = par::map_range(n_sets, |m| v.evaluate(m as u32));
    let weights: Vec<f64> = (0..d as u64)
        .map(|s| 1.0 / (d as u64 * binomial(d as u64 - 1, s)) as f64)
        .collect();
    Ok(par::map_range(d, |i| {
        let bit = 1usize << i;
        let mut phi = 0.0;
        for m in 0..n_sets {
            if m & bit == 0 {
                phi += weights[m.count_ones() as usize] * (values[m | bit] - values[m]);
            }
        }
        phi
    }))
}

/// Conditional expectation of the tree output given the features in `coalition`:
/// follow `x` at splits on features in the coalition, otherwise average the
/// children weighted by cover.
pub fn tree_conditional_value(tree: &DecisionTree, x: &[f64], coalition: u32) -> Result<f64> {
    if x.len() != tree.n_features {
        return Err(Error::DimensionMismatch {
            expected: tree.n_features,
            got: x.len(),
        });
    }
    Ok(conditional(tree, x, coalition, tree.root))
}

pub(crate) fn conditional(tree: &DecisionTree, x: &[f64], coalition: u32, id: usize) -> f64 {
    let node = &tree.nodes[id];
    match node.kind {
        NodeKind::Leaf => node.value,
        NodeKind::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            if feature < 32 && coalition & (1 << feature) != 0 {
                let next = if x[feature] <= threshold { left } else { right };
                conditional(tree, x, coalition, next)
            } else {
                let (l, r) = (&tree.nodes[left], &tree.nodes[right]);
                (l.cover * conditional(tree, x, coalition, left)
                    + r.cover * conditional(tree, x, coalition, right))
                    / node.cover
            }
        }
    }
}
