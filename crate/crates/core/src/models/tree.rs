//! Weighted CART regression trees.
//!
//! Splits minimise the weighted squared error of the two children. Candidate
//! thresholds are midpoints between consecutive distinct values of the
//! positive-weight samples; a row goes left iff `x[feature] <= threshold`.
//! Exact ties are resolved by lowest feature index, then lowest threshold.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_weight_fraction_leaf: f64,
}

impl Default for TreeParams {
    /// Surrogate defaults.
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_samples_leaf: 5,
            min_weight_fraction_leaf: 0.0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::InvalidParameter("max_depth must be >= 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidParameter("min_samples_leaf must be >= 1".into()));
        }
        if !(0.0..=0.5).contains(&self.min_weight_fraction_leaf) {
            return Err(Error::InvalidParameter(
                "min_weight_fraction_leaf must lie in [0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NodeKind {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub kind: NodeKind,
    /// Sum of the sample weights routed to this node.
    pub cover: f64,
    /// Weighted mean target of those samples.
    pub value: f64,
}

impl TreeNode {
    pub fn leaf(cover: f64, value: f64) -> Self {
        Self {
            kind: NodeKind::Leaf,
            cover,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub n_features: usize,
    pub params: TreeParams,
}

impl DecisionTree {
    /// Assembles a tree from explicit nodes, checking that every child id is
    /// valid, every node is reachable exactly once, and covers are positive.
    pub fn from_nodes(
        nodes: Vec<TreeNode>,
        root: usize,
        n_features: usize,
        params: TreeParams,
    ) -> Result<Self> {
        let tree = Self {
            nodes,
            root,
            n_features,
            params,
        };
        tree.check_structure()?;
        Ok(tree)
    }

    fn check_structure(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.root >= n {
            return Err(Error::IndexOutOfRange { index: self.root, n });
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if id >= n {
                return Err(Error::IndexOutOfRange { index: id, n });
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::InvalidParameter(format!("node {id} reached twice")));
            }
            let node = &self.nodes[id];
            if !(node.cover > 0.0) || !node.value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "node {id} needs positive cover and finite value"
                )));
            }
            if let NodeKind::Internal {
                feature,
                threshold,
                left,
                right,
            } = node.kind
            {
                if feature >= self.n_features {
                    return Err(Error::IndexOutOfRange {
                        index: feature,
                        n: self.n_features,
                    });
                }
                if !threshold.is_finite() {
                    return Err(Error::NonFinite(format!("threshold of node {id}")));
                }
                stack.push(left);
                stack.push(right);
            }
        }
        Ok(())
    }

    pub fn root_node(&self) -> &TreeNode {
        &self.nodes[self.root]
    }

    pub fn is_single_leaf(&self) -> bool {
        self.root_node().is_leaf()
    }

    /// Leaf depth maximum (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn rec(t: &DecisionTree, id: usize) -> usize {
            match t.nodes[id].kind {
                NodeKind::Leaf => 0,
                NodeKind::Internal { left, right, .. } => 1 + rec(t, left).max(rec(t, right)),
            }
        }
        rec(self, self.root)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Sorted, de-duplicated split features.
    pub fn split_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Internal { feature, .. } => Some(feature),
                NodeKind::Leaf => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Leaf id reached by `x`. Does not check the length of `x`.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut id = self.root;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf => return id,
                NodeKind::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.nodes[self.leaf_of(x)].value)
    }

    pub fn predict_batch(&self, rows: &Matrix) -> Result<Vec<f64>> {
        rows.iter_rows().map(|r| self.predict(r)).collect()
    }
}

/// `predict_tree`: value of the leaf `x` is routed to.
pub fn predict_tree(tree: &DecisionTree, x: &[f64]) -> Result<f64> {
    tree.predict(x)
}

/// Feature subsampling applied at every split (random forests).
pub(crate) struct FeatureSampler {
    pub max_features: usize,
    pub rng: RandomStream,
}

/// Fits a weighted regression tree. Zero-weight rows are dropped before fitting
/// and have no influence on the result.
pub fn fit_tree(x: &Matrix, y: &[f64], w: &[f64], params: &TreeParams) -> Result<DecisionTree> {
    fit_tree_inner(x, y, w, params, None)
}

pub(crate) fn fit_tree_inner(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    params: &TreeParams,
    sampler: Option<FeatureSampler>,
) -> Result<DecisionTree> {
    params.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("training matrix".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.len() });
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
    }
    let samples: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    if samples.is_empty() {
        return Err(Error::InvalidWeights("all weights are zero".into()));
    }
    let total_weight: f64 = samples.iter().map(|&i| w[i]).sum();
    let mut builder = Builder {
        x,
        y,
        w,
        params,
        min_leaf_weight: params.min_weight_fraction_leaf * total_weight,
        sampler,
        nodes: Vec::new(),
        goes_left: vec![false; n],
    };
    // Rows sorted once per feature (value, then row); splits partition these
    // lists stably, so no node ever re-sorts.
    let sorted: Vec<Vec<(f64, usize)>> = (0..x.ncols())
        .map(|f| {
            let mut keyed: Vec<(u64, usize)> = samples.iter().map(|&i| (order_key(x.get(i, f)), i)).collect();
            keyed.sort_unstable();
            keyed.into_iter().map(|(_, i)| (x.get(i, f), i)).collect()
        })
        .collect();
    let root = builder.grow(samples, sorted, 0);
    Ok(DecisionTree {
        nodes: builder.nodes,
        root,
        n_features: x.ncols(),
        params: *params,
    })
}

/// Maps `f64` to `u64` preserving `total_cmp` order.
fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Stable partition into preallocated halves.
fn split_by<T: Copy>(items: &[T], n_left: usize, left: impl Fn(&T) -> bool) -> (Vec<T>, Vec<T>) {
    let mut l = Vec::with_capacity(n_left);
    let mut r = Vec::with_capacity(items.len() - n_left);
    for it in items {
        if left(it) {
            l.push(*it);
        } else {
            r.push(*it);
        }
    }
    (l, r)
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    w: &'a [f64],
    params: &'a TreeParams,
    min_leaf_weight: f64,
    sampler: Option<FeatureSampler>,
    nodes: Vec<TreeNode>,
    goes_left: Vec<bool>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn grow(&mut self, samples: Vec<usize>, sorted: Vec<Vec<(f64, usize)>>, depth: usize) -> usize {
        let cover: f64 = samples.iter().map(|&i| self.w[i]).sum();
        let first = self.y[samples[0]];
        let constant = samples.iter().all(|&i| self.y[i] == first);
        let value = if constant {
            first
        } else {
            samples.iter().map(|&i| self.w[i] * self.y[i]).sum::<f64>() / cover
        };
        let id = self.nodes.len();
        self.nodes.push(TreeNode::leaf(cover, value));

        if depth >= self.params.max_depth
            || samples.len() < 2 * self.params.min_samples_leaf
            || constant
        {
            return id;
        }
        let Some(split) = self.best_split(&samples, &sorted, cover, value) else {
            return id;
        };
        for &i in &samples {
            self.goes_left[i] = self.x.get(i, split.feature) <= split.threshold;
        }
        let mask = &self.goes_left;
        let n_left = samples.iter().filter(|&&i| mask[i]).count();
        let (left, right) = split_by(&samples, n_left, |&i| mask[i]);
        let mut sorted_left = Vec::with_capacity(sorted.len());
        let mut sorted_right = Vec::with_capacity(sorted.len());
        for list in &sorted {
            let (l, r) = split_by(list, n_left, |&(_, i)| mask[i]);
            sorted_left.push(l);
            sorted_right.push(r);
        }
        drop(sorted);
        let left_id = self.grow(left, sorted_left, depth + 1);
        let right_id = self.grow(right, sorted_right, depth + 1);
        self.nodes[id].kind = NodeKind::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: left_id,
            right: right_id,
        };
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x.ncols();
        match &mut self.sampler {
            Some(s) if s.max_features < d => {
                let mut f = s.rng.sample_indices(d, s.max_features);
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, samples: &[usize], sorted: &[Vec<(f64, usize)>], cover: f64, mean: f64) -> Option<Split> {
        // Centred targets keep the prefix-sum SSE well conditioned.
        let (mut s1, mut s2) = (0.0, 0.0);
        for &i in samples {
            let c = self.y[i] - mean;
            s1 += self.w[i] * c;
            s2 += self.w[i] * c * c;
        }
        let parent_sse = (s2 - s1 * s1 / cover).max(0.0);
        let tol = 1e-12 * parent_sse;
        let min_leaf = self.params.min_samples_leaf;
        let n = samples.len();

        let mut best: Option<Split> = None;
        for f in self.candidate_features() {
            let order = &sorted[f];
            let (mut lw, mut l1, mut l2) = (0.0, 0.0, 0.0);
            for pos in 0..n - 1 {
                let (lo, i) = order[pos];
                let c = self.y[i] - mean;
                lw += self.w[i];
                l1 += self.w[i] * c;
                l2 += self.w[i] * c * c;
                let hi = order[pos + 1].0;
                if lo == hi || pos + 1 < min_leaf || n - pos - 1 < min_leaf {
                    continue;
                }
                let rw = cover - lw;
                if lw < self.min_leaf_weight || rw < self.min_leaf_weight || rw <= 0.0 {
                    continue;
                }
                let (r1, r2) = (s1 - l1, s2 - l2);
                let score = (l2 - l1 * l1 / lw).max(0.0) + (r2 - r1 * r1 / rw).max(0.0);
                let better = match &best {
                    None => true,
                    Some(b) => score < b.score - tol,
                };
                if better {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best.filter(|b| b.score < parent_sse - tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    fn depth1() -> TreeParams {
        TreeParams {
            max_depth: 1,
            min_samples_leaf: 1,
            min_weight_fraction_leaf: 0.0,
        }
    }

    pub(crate) fn assert_recurrences(tree: &DecisionTree) {
        for node in &tree.nodes {
            assert!(node.cover > 0.0);
            if let NodeKind::Internal { left, right, .. } = node.kind {
                let (l, r) = (&tree.nodes[left], &tree.nodes[right]);
                let cover = l.cover + r.cover;
                assert!((node.cover - cover).abs() <= 1e-9 * node.cover);
                let value = (l.cover * l.value + r.cover * r.value) / node.cover;
                assert!((node.value - value).abs() <= 1e-9 * node.value.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = Matrix::from_vec(4, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let w = [1.0, 2.0, 0.5, 1.5];
        let t = fit_tree(&x, &[3.7; 4], &w, &TreeParams::default()).unwrap();
        assert!(t.is_single_leaf());
        assert_eq!(t.root_node().value, 3.7);
        assert_eq!(t.root_node().cover, 5.0);
        assert_eq!(predict_tree(&t, &[100.0, -3.0]).unwrap(), 3.7);
    }

    #[test]
    fn stump_splits_at_midpoint() {
        // Candidates 0.5, 1.5, 2.5 give child SSE 10.67, 0, 10.67.
        let t = fit_tree(&column(&[0.0, 1.0, 2.0, 3.0]), &[0.0, 0.0, 4.0, 4.0], &[1.0; 4], &depth1())
            .unwrap();
        match t.root_node().kind {
            NodeKind::Internal { feature, threshold, left, right } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 1.5);
                assert_eq!(t.nodes[left], TreeNode::leaf(2.0, 0.0));
                assert_eq!(t.nodes[right], TreeNode::leaf(2.0, 4.0));
            }
            NodeKind::Leaf => panic!("expected a split"),
        }
        assert_eq!(predict_tree(&t, &[0.5]).unwrap(), 0.0);
        assert_eq!(predict_tree(&t, &[1.5]).unwrap(), 0.0);
        assert_eq!(predict_tree(&t, &[1.5000001]).unwrap(), 4.0);
        assert!(matches!(
            predict_tree(&t, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let base = fit_tree(&column(&[0.0, 1.0, 2.0, 3.0]), &[0.0, 0.0, 4.0, 4.0], &[1.0; 4], &depth1())
            .unwrap();
        let extra = fit_tree(
            &column(&[0.0, 1.0, 2.0, 3.0, 1.2]),
            &[0.0, 0.0, 4.0, 4.0, 100.0],
            &[1.0, 1.0, 1.0, 1.0, 0.0],
            &depth1(),
        )
        .unwrap();
        assert_eq!(base, extra);
    }

    #[test]
    fn tie_break_prefers_lowest_feature_then_threshold() {
        // Both features separate y identically.
        let x = Matrix::from_vec(4, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let t = fit_tree(&x, &[0.0, 0.0, 4.0, 4.0], &[1.0; 4], &depth1()).unwrap();
        assert!(matches!(t.root_node().kind, NodeKind::Internal { feature: 0, .. }));
        // Symmetric y: thresholds 0.5 and 2.5 tie, 0.5 wins.
        let t = fit_tree(&column(&[0.0, 1.0, 2.0]), &[1.0, 0.0, 1.0], &[1.0; 3], &depth1()).unwrap();
        assert!(matches!(t.root_node().kind, NodeKind::Internal { threshold, .. } if threshold == 0.5));
    }

    #[test]
    fn input_errors() {
        let x = column(&[0.0, 1.0]);
        assert!(matches!(
            fit_tree(&x, &[0.0, 1.0], &[0.0, 0.0], &depth1()),
            Err(Error::InvalidWeights(_))
        ));
        assert!(matches!(
            fit_tree(&x, &[0.0, f64::NAN], &[1.0, 1.0], &depth1()),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            fit_tree(&column(&[0.0, f64::INFINITY]), &[0.0, 1.0], &[1.0, 1.0], &depth1()),
            Err(Error::NonFinite(_))
        ));
        assert!(fit_tree(&x, &[0.0, 1.0], &[-1.0, 1.0], &depth1()).is_err());
        let bad = TreeParams { max_depth: 0, ..depth1() };
        assert!(fit_tree(&x, &[0.0, 1.0], &[1.0, 1.0], &bad).is_err());
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|v| if *v < 2.0 { 10.0 } else { 0.0 }).collect();
        let params = TreeParams { max_depth: 3, min_samples_leaf: 5, min_weight_fraction_leaf: 0.0 };
        let t = fit_tree(&column(&xs), &ys, &vec![1.0; 20], &params).unwrap();
        let mut counts = vec![0usize; t.nodes.len()];
        for v in &xs {
            counts[t.leaf_of(&[*v])] += 1;
        }
        for (id, node) in t.nodes.iter().enumerate() {
            if node.is_leaf() {
                assert!(counts[id] >= 5, "leaf {id} has {} samples", counts[id]);
            }
        }
    }

    #[test]
    fn from_nodes_rejects_bad_structure() {
        let leaf = TreeNode::leaf(1.0, 0.0);
        let split = TreeNode {
            kind: NodeKind::Internal { feature: 0, threshold: 0.0, left: 1, right: 1 },
            cover: 2.0,
            value: 0.0,
        };
        assert!(DecisionTree::from_nodes(vec![split, leaf], 0, 1, depth1()).is_err());
        assert!(DecisionTree::from_nodes(vec![TreeNode::leaf(0.0, 1.0)], 0, 1, depth1()).is_err());
        assert!(DecisionTree::from_nodes(vec![leaf], 0, 1, depth1()).is_ok());
    }

    fn dataset_strategy() -> impl Strategy<Value = (usize, Vec<Vec<i32>>, Vec<i32>, Vec<u8>)> {
        (1usize..4, 2usize..25).prop_flat_map(|(d, n)| {
            (
                Just(d),
                prop::collection::vec(prop::collection::vec(-5i32..5, d), n),
                prop::collection::vec(-20i32..20, n),
                prop::collection::vec(0u8..4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn recurrences_hold_on_fitted_trees((d, rows, ys, ws) in dataset_strategy(), depth in 1usize..6) {
            prop_assume!(ws.iter().any(|&k| k > 0));
            let flat: Vec<f64> = rows.iter().flatten().map(|&v| f64::from(v) * 0.37).collect();
            let x = Matrix::from_vec(rows.len(), d, flat).unwrap();
            let y: Vec<f64> = ys.iter().map(|&v| f64::from(v) * 1.3).collect();
            let w: Vec<f64> = ws.iter().map(|&k| f64::from(k) * 0.7).collect();
            let params = TreeParams { max_depth: depth, min_samples_leaf: 1, min_weight_fraction_leaf: 0.0 };
            let t = fit_tree(&x, &y, &w, &params).unwrap();
            assert_recurrences(&t);
            prop_assert!(t.depth() <= depth);
        }

        #[test]
        fn integer_weights_equal_repetition((d, rows, ys, ws) in dataset_strategy(), depth in 1usize..5) {
            prop_assume!(ws.iter().any(|&k| k > 0));
            let params = TreeParams { max_depth: depth, min_samples_leaf: 1, min_weight_fraction_leaf: 0.0 };
            let flat: Vec<f64> = rows.iter().flatten().map(|&v| f64::from(v)).collect();
            let x = Matrix::from_vec(rows.len(), d, flat).unwrap();
            let y: Vec<f64> = ys.iter().map(|&v| f64::from(v)).collect();
            let w: Vec<f64> = ws.iter().map(|&k| f64::from(k)).collect();
            let weighted = fit_tree(&x, &y, &w, &params).unwrap();

            let mut rep_rows = Vec::new();
            let mut rep_y = Vec::new();
            for (i, &k) in ws.iter().enumerate() {
                for _ in 0..k {
                    rep_rows.push(x.row(i).to_vec());
                    rep_y.push(y[i]);
                }
            }
            let rx = Matrix::from_rows(&rep_rows).unwrap();
            let repeated = fit_tree(&rx, &rep_y, &vec![1.0; rep_y.len()], &params).unwrap();
            prop_assert_eq!(weighted.nodes.len(), repeated.nodes.len());
            for (a, b) in weighted.nodes.iter().zip(&repeated.nodes) {
                prop_assert_eq!(a.kind, b.kind);
                prop_assert_eq!(a.cover, b.cover);
                prop_assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
            }
        }

        #[test]
        fn pure_tree_reproduces_targets(raw in prop::collection::btree_set(-1000i32..1000, 1..30)) {
            let xs: Vec<f64> = raw.iter().map(|&v| f64::from(v) / 10.0).collect();
            let ys: Vec<f64> = xs.iter().map(|v| (v * 3.1).sin()).collect();
            let params = TreeParams { max_depth: 64, min_samples_leaf: 1, min_weight_fraction_leaf: 0.0 };
            let t = fit_tree(&column(&xs), &ys, &vec![1.0; xs.len()], &params).unwrap();
            for (x, y) in xs.iter().zip(&ys) {
                prop_assert_eq!(predict_tree(&t, &[*x]).unwrap(), *y);
            }
        }
    }
}
