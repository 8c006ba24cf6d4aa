#![allow(dead_code)]

use limase::models::{DecisionTree, NodeKind, TreeNode, TreeParams};
use limase::RandomStream;

/// Random tree with integer leaf covers, parent cover = sum of children and
/// internal values equal to the cover-weighted mean below them.
pub fn random_tree(rng: &mut RandomStream, d: usize, max_depth: usize, allowed: &[usize]) -> DecisionTree {
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, max_depth, 0, allowed);
    DecisionTree::from_nodes(nodes, 0, d, TreeParams { max_depth: max_depth.max(1), ..Default::default() }).unwrap()
}

fn grow(rng: &mut RandomStream, nodes: &mut Vec<TreeNode>, max_depth: usize, depth: usize, allowed: &[usize]) -> usize {
    let id = nodes.len();
    nodes.push(TreeNode::leaf(1.0, 0.0));
    let split = !allowed.is_empty() && depth < max_depth && (depth == 0 || rng.uniform() < 0.75);
    if !split {
        nodes[id] = TreeNode::leaf((1 + rng.below(20)) as f64, 3.0 * rng.gaussian());
        return id;
    }
    let feature = allowed[rng.below(allowed.len())];
    let threshold = (rng.gaussian() * 8.0).round() / 8.0;
    let left = grow(rng, nodes, max_depth, depth + 1, allowed);
    let right = grow(rng, nodes, max_depth, depth + 1, allowed);
    let (cl, cr) = (nodes[left].cover, nodes[right].cover);
    let value = (cl * nodes[left].value + cr * nodes[right].value) / (cl + cr);
    nodes[id] = TreeNode { kind: NodeKind::Internal { feature, threshold, left, right }, cover: cl + cr, value };
    id
}

/// Replaces every leaf `v` by a split on `feature` at `threshold` with leaves
/// `v + low` (share `p` of the cover) and `v + high`.
pub fn graft_stump(tree: &DecisionTree, feature: usize, threshold: f64, p: f64, low: f64, high: f64) -> DecisionTree {
    let mut nodes = tree.nodes.clone();
    let n = nodes.len();
    for id in 0..n {
        if nodes[id].is_leaf() {
            let TreeNode { cover, value, .. } = nodes[id];
            let left = nodes.len();
            nodes.push(TreeNode::leaf(cover * p, value + low));
            nodes.push(TreeNode::leaf(cover * (1.0 - p), value + high));
            nodes[id] = TreeNode {
                kind: NodeKind::Internal { feature, threshold, left, right: left + 1 },
                cover,
                value: value + p * low + (1.0 - p) * high,
            };
        }
    }
    // Internal values above the grafts shift by the same constant.
    for id in 0..n {
        if !tree.nodes[id].is_leaf() {
            nodes[id].value += p * low + (1.0 - p) * high;
        }
    }
    DecisionTree::from_nodes(nodes, tree.root, tree.n_features, tree.params).unwrap()
}

pub fn random_point(rng: &mut RandomStream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gaussian()).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
