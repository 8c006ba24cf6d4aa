//! Bagged regression-tree forests.
//!
//! Classification forests hold one group of probability-regression trees per
//! class, each fit on the class-indicator target. Predictions average every
//! group and renormalise the class scores into a probability vector.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix, Task};
use crate::error::{Error, Result};
use crate::model::{BlackBoxModel, ModelOutput};
use crate::models::tree::{fit_tree_inner, DecisionTree, FeatureSampler, TreeParams};
use crate::par;
use crate::rng::{derive_seed, RandomStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    /// Resample n rows with replacement per tree.
    pub bootstrap: bool,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            tree: TreeParams {
                max_depth: 8,
                min_samples_leaf: 2,
                min_weight_fraction_leaf: 0.0,
            },
            bootstrap: true,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub task: Task,
    pub n_features: usize,
    /// `groups[k][t]`: tree `t` of output `k` (one group for regression).
    pub groups: Vec<Vec<DecisionTree>>,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    /// Mean tree output for one output group, before any renormalisation.
    pub fn raw_score(&self, group: usize, x: &[f64]) -> f64 {
        let trees = &self.groups[group];
        trees.iter().map(|t| t.nodes[t.leaf_of(x)].value).sum::<f64>() / trees.len() as f64
    }

    fn predict_into(&self, x: &[f64], out: &mut Vec<f64>) {
        let start = out.len();
        for k in 0..self.groups.len() {
            out.push(self.raw_score(k, x));
        }
        if let Task::Classification { n_classes } = self.task {
            let scores = &mut out[start..];
            for s in scores.iter_mut() {
                *s = s.max(0.0);
            }
            let total: f64 = scores.iter().sum();
            if total > 0.0 {
                scores.iter_mut().for_each(|s| *s /= total);
            } else {
                scores.iter_mut().for_each(|s| *s = 1.0 / n_classes as f64);
            }
        }
    }
}

impl BlackBoxModel for ForestModel {
    fn task(&self) -> Task {
        self.task
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, rows: &Matrix) -> Result<ModelOutput> {
        if rows.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: rows.ncols(),
            });
        }
        let width = self.task.output_width();
        let mut data = Vec::with_capacity(rows.nrows() * width);
        for r in rows.iter_rows() {
            self.predict_into(r, &mut data);
        }
        Ok(ModelOutput {
            values: Matrix::from_vec(rows.nrows(), width, data)?,
        })
    }
}

/// Fits a forest; per-tree seeds are derived before dispatch, so the result
/// does not depend on thread scheduling.
pub fn fit_random_forest(
    data: &Dataset,
    params: &ForestParams,
    rng: &mut RandomStream,
) -> Result<ForestModel> {
    let n = data.n_samples();
    let d = data.n_features();
    if n == 0 {
        return Err(Error::Empty("dataset".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be >= 1".into()));
    }
    params.tree.validate()?;
    let max_features = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let targets: Vec<Vec<f64>> = match data.task {
        Task::Regression => vec![data.target.clone()],
        Task::Classification { n_classes } => (0..n_classes)
            .map(|c| {
                data.target
                    .iter()
                    .map(|&t| if t as usize == c { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
    };
    let base_seed = rng.next_u64();

    let fitted: Vec<Result<Vec<DecisionTree>>> = par::map_range(params.n_trees, |t| {
        let seed = derive_seed(base_seed, t as u64);
        let mut tree_rng = RandomStream::new(seed);
        let mut weights = vec![0.0; n];
        if params.bootstrap {
            for _ in 0..n {
                weights[tree_rng.below(n)] += 1.0;
            }
        } else {
            weights.fill(1.0);
        }
        targets
            .iter()
            .enumerate()
            .map(|(k, y)| {
                let sampler = FeatureSampler {
                    max_features,
                    rng: RandomStream::new(derive_seed(seed, k as u64 + 1)),
                };
                fit_tree_inner(&data.rows, y, &weights, &params.tree, Some(sampler))
            })
            .collect()
    });

    let mut groups = vec![Vec::with_capacity(params.n_trees); targets.len()];
    for per_tree in fitted {
        for (k, tree) in per_tree?.into_iter().enumerate() {
            groups[k].push(tree);
        }
    }
    Ok(ForestModel {
        task: data.task,
        n_features: d,
        groups,
    })
}
