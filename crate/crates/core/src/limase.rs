//! The surrogate-tree explainer.
//!
//! For an instance `x`: draw Gaussian perturbations scaled by each feature's
//! standard deviation (centred on the data means by default, or on `x`),
//! query the black box, weight every sample with
//! `exp(-d^2 / sigma^2)` where `d` is the Euclidean distance in standardised
//! space, fit a weighted regression tree, and explain the tree at `x` with
//! TreeSHAP. The anchor `x` is always part of the sample with weight 1.
//!
//! Attributions are exact for the surrogate `g`: `base + sum(phi) = g(x)`.
//! How well `g` tracks the black box is reported as a weighted R^2.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{standardize, FeatureMeta, Matrix};
use crate::error::{Error, Result};
use crate::model::{predict_scalar, resolve_target, BlackBoxModel, OutputTarget};
use crate::models::tree::{fit_tree, DecisionTree, TreeParams};
use crate::par;
use crate::rng::{derive_seed, RandomStream};
use crate::shapley::{tree_shap, ShapExplanation};

/// Kernel width used by [`SigmaMode::Auto`], in standardised units
/// (five standard deviations along every dimension).
pub const AUTO_SIGMA: f64 = 5.0;

pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    Auto,
    Absolute(f64),
}

/// Where the Gaussian perturbations are centred.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleCenter {
    /// Feature means of the data; the kernel still localises around `x`.
    #[default]
    Data,
    /// The instance being explained.
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimaseConfig {
    /// Perturbation set size, anchor included.
    pub n_samples: usize,
    pub sigma: SigmaMode,
    #[serde(default)]
    pub center: SampleCenter,
    pub tree_params: TreeParams,
    pub seed: u64,
    pub class_index: Option<usize>,
}

impl Default for LimaseConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            sigma: SigmaMode::Auto,
            center: SampleCenter::default(),
            tree_params: TreeParams::default(),
            seed: 0,
            class_index: None,
        }
    }
}

impl LimaseConfig {
    pub fn sigma(&self) -> f64 {
        match self.sigma {
            SigmaMode::Auto => AUTO_SIGMA,
            SigmaMode::Absolute(s) => s,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self {
            sigma: SigmaMode::Absolute(sigma),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < MIN_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "n_samples must be >= {MIN_SAMPLES}"
            )));
        }
        let s = self.sigma();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {s}")));
        }
        self.tree_params.validate()
    }
}

/// Perturbed rows, their black-box outputs, and kernel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub rows: Matrix,
    pub outputs: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PerturbationSet {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// `sum(w) / max(w)`.
    pub fn effective_sample_size(&self) -> f64 {
        let max = self.weights.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            self.weights.iter().sum::<f64>() / max
        } else {
            0.0
        }
    }

    pub fn weighted_mean_output(&self) -> f64 {
        let w: f64 = self.weights.iter().sum();
        self.weights
            .iter()
            .zip(&self.outputs)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / w
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimaseResult {
    #[serde(flatten)]
    pub explanation: ShapExplanation,
    pub fidelity_r2: f64,
    pub sigma: f64,
    pub n_samples: usize,
    /// The surrogate is a single leaf (locally constant model output).
    pub degenerate: bool,
    pub surrogate_depth: usize,
    pub seed: u64,
    #[serde(skip)]
    pub surrogate: DecisionTree,
}

/// `n` rows `x_j + std_j * g`, `g` standard normal. Zero-variance features stay at `x_j`.
pub fn sample_around(
    x: &[f64],
    features: &[FeatureMeta],
    n: usize,
    rng: &mut RandomStream,
) -> Result<Matrix> {
    let d = features.len();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for (xj, f) in x.iter().zip(features) {
            let g = rng.gaussian();
            data.push(if f.std > 0.0 { xj + f.std * g } else { *xj });
        }
    }
    Matrix::from_vec(n, d, data)
}

fn weight_from_distance(dist_sq: f64, sigma: f64) -> f64 {
    // Clamped so distant samples keep a positive (negligible) weight.
    (-dist_sq / (sigma * sigma)).exp().max(f64::MIN_POSITIVE)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `exp(-d(x, z)^2 / sigma^2)` with `d` measured between standardised rows.
pub fn kernel_weight(x: &[f64], z: &[f64], sigma: f64, features: &[FeatureMeta]) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let sx = standardize(x, features)?;
    let sz = standardize(z, features)?;
    Ok(weight_from_distance(squared_distance(&sx, &sz), sigma))
}

/// Builds the weighted perturbation set; row 0 is the anchor `x`.
pub fn build_perturbations(
    model: &dyn BlackBoxModel,
    x: &[f64],
    features: &[FeatureMeta],
    config: &LimaseConfig,
    target: OutputTarget,
) -> Result<PerturbationSet> {
    let mut rng = RandomStream::new(config.seed);
    let mut rows = Matrix::empty(x.len());
    rows.push_row(x)?;
    let center: Vec<f64> = match config.center {
        SampleCenter::Instance => x.to_vec(),
        // Constant features stay at x_j either way.
        SampleCenter::Data => features
            .iter()
            .zip(x)
            .map(|(f, xj)| if f.std > 0.0 { f.mean } else { *xj })
            .collect(),
    };
    let sampled = sample_around(&center, features, config.n_samples - 1, &mut rng)?;
    for r in sampled.iter_rows() {
        rows.push_row(r)?;
    }
    let outputs = predict_scalar(model, &rows, target)?;
    let sigma = config.sigma();
    let sx = standardize(x, features)?;
    let weights = rows
        .iter_rows()
        .enumerate()
        .map(|(i, r)| {
            if i == 0 {
                Ok(1.0)
            } else {
                let sz = standardize(r, features)?;
                Ok(weight_from_distance(squared_distance(&sx, &sz), sigma))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PerturbationSet { rows, outputs, weights })
}

/// Weighted R^2 of the surrogate on the perturbation set. A constant model
/// output is reported as 1 when the surrogate reproduces it.
pub fn weighted_r2(set: &PerturbationSet, surrogate: &DecisionTree) -> Result<f64> {
    let mean = set.weighted_mean_output();
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (i, r) in set.rows.iter_rows().enumerate() {
        let w = set.weights[i];
        let f = set.outputs[i];
        let g = surrogate.predict(r)?;
        ss_res += w * (g - f) * (g - f);
        ss_tot += w * (f - mean) * (f - mean);
    }
    if ss_tot > 0.0 {
        Ok(1.0 - ss_res / ss_tot)
    } else if ss_res == 0.0 {
        Ok(1.0)
    } else {
        Ok(f64::NEG_INFINITY)
    }
}

/// Explains `model` at `x` through a weighted surrogate tree.
pub fn limase_explain(
    model: &dyn BlackBoxModel,
    x: &[f64],
    features: &[FeatureMeta],
    config: &LimaseConfig,
) -> Result<LimaseResult> {
    config.validate()?;
    let d = model.n_features();
    if x.len() != d || features.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if x.len() != d { x.len() } else { features.len() },
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("instance".into()));
    }
    let start = Instant::now();
    let target = resolve_target(model, x, config.class_index)?;
    let set = build_perturbations(model, x, features, config, target)?;
    let surrogate = fit_tree(&set.rows, &set.outputs, &set.weights, &config.tree_params)?;
    let fidelity_r2 = weighted_r2(&set, &surrogate)?;
    let names: Vec<String> = features.iter().map(|f| f.name.clone()).collect();
    let mut explanation = tree_shap(&surrogate, x)?.with_names(&names);
    explanation.explainer = "limase".into();
    explanation.class_index = target.class_index();
    explanation.elapsed_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    Ok(LimaseResult {
        explanation,
        fidelity_r2,
        sigma: config.sigma(),
        n_samples: set.len(),
        degenerate: surrogate.is_single_leaf(),
        surrogate_depth: surrogate.depth(),
        seed: config.seed,
        surrogate,
    })
}

/// Explains every row of `rows`; row `i` uses seed `derive_seed(config.seed, i)`.
/// Failures are reported per row.
pub fn limase_explain_batch(
    model: &dyn BlackBoxModel,
    rows: &Matrix,
    features: &[FeatureMeta],
    config: &LimaseConfig,
) -> Vec<Result<LimaseResult>> {
    par::map_range(rows.nrows(), |i| {
        let cfg = config.with_seed(derive_seed(config.seed, i as u64));
        limase_explain(model, rows.row(i), features, &cfg).map_err(|e| Error::Instance {
            index: i,
            source: Box::new(e),
        })
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub result: LimaseResult,
}

/// One explanation per kernel width, all from the same perturbation draw.
pub fn sigma_sweep(
    model: &dyn BlackBoxModel,
    x: &[f64],
    features: &[FeatureMeta],
    config: &LimaseConfig,
    sigmas: &[f64],
) -> Result<Vec<SweepPoint>> {
    if sigmas.is_empty() {
        return Err(Error::InvalidParameter("sigma grid is empty".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {s}")));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let result = limase_explain(model, x, features, &config.with_sigma(sigma))?;
            Ok(SweepPoint { sigma, result })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_feature_meta, Task};
    use crate::model::FnModel;
    use crate::models::tree::{NodeKind, TreeNode};

    fn meta(stds: &[f64]) -> Vec<FeatureMeta> {
        stds.iter()
            .enumerate()
            .map(|(j, &s)| FeatureMeta {
                name: format!("f{j}"),
                index: j,
                mean: 0.0,
                std: s,
                min: -3.0 * s,
                max: 3.0 * s,
            })
            .collect()
    }

    #[test]
    fn sample_around_edge_cases() {
        let mut rng = RandomStream::new(1);
        let m = sample_around(&[1.0, 2.0], &meta(&[1.0, 1.0]), 0, &mut rng).unwrap();
        assert_eq!(m.nrows(), 0);
        let m = sample_around(&[1.0, 2.0], &meta(&[0.0, 0.0]), 5, &mut rng).unwrap();
        assert!(m.iter_rows().all(|r| r == [1.0, 2.0]));
        assert!(sample_around(&[1.0], &meta(&[1.0, 1.0]), 3, &mut rng).is_err());
    }

    #[test]
    fn sample_around_moments() {
        let stds = [0.5, 2.0, 10.0];
        let x = [1.0, -3.0, 40.0];
        let n = 100_000;
        let m = sample_around(&x, &meta(&stds), n, &mut RandomStream::new(8)).unwrap();
        for j in 0..3 {
            let col = m.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!((mean - x[j]).abs() < 0.02 * stds[j], "col {j} mean {mean}");
            assert!((sd - stds[j]).abs() < 0.03 * stds[j], "col {j} sd {sd}");
        }
    }

    #[test]
    fn kernel_weight_values() {
        let f = meta(&[2.0, 1.0]);
        assert_eq!(kernel_weight(&[1.0, 1.0], &[1.0, 1.0], 0.3, &f).unwrap(), 1.0);
        // Standardised distance 1 (feature 0 moved by one std).
        let w = kernel_weight(&[0.0, 0.0], &[2.0, 0.0], 1.0, &f).unwrap();
        assert!((w - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w - 0.367879).abs() < 1e-6);
        let w = kernel_weight(&[-6.0, 3.0], &[6.0, -3.0], 1e9, &f).unwrap();
        assert!(w >= 1.0 - 1e-9);
        assert!(kernel_weight(&[0.0, 0.0], &[1.0, 0.0], 0.0, &f).is_err());
        // Far-away samples keep a tiny positive weight.
        assert!(kernel_weight(&[0.0, 0.0], &[200.0, 0.0], 0.01, &f).unwrap() > 0.0);
    }

    #[test]
    fn kernel_weight_decreases_with_distance() {
        let f = meta(&[1.0]);
        let mut last = 1.0;
        for k in 1..50 {
            let w = kernel_weight(&[0.0], &[k as f64 * 0.1], 2.0, &f).unwrap();
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn constant_model_is_degenerate() {
        let m = FnModel::regression(3, |_| 4.2);
        let r = limase_explain(&m, &[0.0, 1.0, 2.0], &meta(&[1.0, 1.0, 1.0]), &LimaseConfig::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.explanation.phi, vec![0.0; 3]);
        assert_eq!(r.explanation.base_value, 4.2);
        assert_eq!(r.fidelity_r2, 1.0);
    }

    fn stump_model() -> DecisionTree {
        let nodes = vec![
            TreeNode {
                kind: NodeKind::Internal { feature: 0, threshold: 0.25, left: 1, right: 2 },
                cover: 2.0,
                value: 1.5,
            },
            TreeNode::leaf(1.0, -1.0),
            TreeNode::leaf(1.0, 4.0),
        ];
        DecisionTree::from_nodes(nodes, 0, 4, TreeParams::default()).unwrap()
    }

    #[test]
    fn recovers_representable_stump() {
        let f = stump_model();
        let cfg = LimaseConfig { n_samples: 2000, seed: 17, ..Default::default() };
        let features = meta(&[1.0, 1.0, 1.0, 1.0]);
        let r = limase_explain(&f, &[0.5, 0.1, -0.2, 0.3], &features, &cfg).unwrap();
        assert_eq!(r.explanation.ranking()[0], 0);
        assert!(r.fidelity_r2 >= 0.95, "r2 {}", r.fidelity_r2);
        let g_x = r.surrogate.predict(&[0.5, 0.1, -0.2, 0.3]).unwrap();
        assert!((r.explanation.base_value + r.explanation.phi_sum() - g_x).abs() <= 1e-9 * g_x.abs().max(1.0));
        assert_eq!(r.explanation.fx, g_x);
    }

    #[test]
    fn constant_feature_gets_zero() {
        let m = FnModel::regression(3, |x| x[0] * x[0] + x[1] - x[2]);
        let features = meta(&[1.0, 0.0, 1.0]);
        let r = limase_explain(&m, &[0.3, 7.0, -0.1], &features, &LimaseConfig::default()).unwrap();
        assert_eq!(r.explanation.phi[1], 0.0);
        assert!(!r.surrogate.split_features().contains(&1));
    }

    #[test]
    fn classification_targets_a_probability() {
        let m = FnModel::new(Task::Classification { n_classes: 2 }, 2, |x| {
            let p = 1.0 / (1.0 + (-3.0 * x[0]).exp());
            vec![1.0 - p, p]
        });
        let features = meta(&[1.0, 1.0]);
        let r = limase_explain(&m, &[1.0, 0.0], &features, &LimaseConfig::default()).unwrap();
        assert_eq!(r.explanation.class_index, Some(1));
        assert!(r.explanation.phi[0] > 0.0);
        let r0 = limase_explain(&m, &[1.0, 0.0], &features, &LimaseConfig { class_index: Some(0), ..Default::default() })
            .unwrap();
        assert!(r0.explanation.phi[0] < 0.0);
        assert!(limase_explain(&m, &[1.0, 0.0], &features, &LimaseConfig { class_index: Some(2), ..Default::default() })
            .is_err());
    }

    #[test]
    fn config_validation() {
        let m = FnModel::regression(1, |x| x[0]);
        let f = meta(&[1.0]);
        let small = LimaseConfig { n_samples: 5, ..Default::default() };
        assert!(limase_explain(&m, &[0.0], &f, &small).is_err());
        let bad_sigma = LimaseConfig::default().with_sigma(0.0);
        assert!(limase_explain(&m, &[0.0], &f, &bad_sigma).is_err());
        assert!(limase_explain(&m, &[f64::NAN], &f, &LimaseConfig::default()).is_err());
        assert!(limase_explain(&m, &[0.0, 1.0], &f, &LimaseConfig::default()).is_err());
    }

    #[test]
    fn batch_matches_single_with_derived_seeds() {
        let m = FnModel::regression(2, |x| x[0].sin() + x[1] * x[0]);
        let rows = Matrix::from_rows(&[vec![0.1, 0.2], vec![-1.0, 0.5], vec![2.0, -1.0]]).unwrap();
        let features = compute_feature_meta(&rows, &["a".into(), "b".into()]);
        let cfg = LimaseConfig { n_samples: 200, seed: 99, ..Default::default() };
        let batch = limase_explain_batch(&m, &rows, &features, &cfg);
        assert_eq!(batch.len(), 3);
        for (i, r) in batch.iter().enumerate() {
            let r = r.as_ref().unwrap();
            let single =
                limase_explain(&m, rows.row(i), &features, &cfg.with_seed(derive_seed(99, i as u64))).unwrap();
            assert_eq!(r.explanation.phi, single.explanation.phi);
            assert_eq!(r.surrogate, single.surrogate);
        }
        let again = limase_explain_batch(&m, &rows, &features, &cfg);
        for (a, b) in batch.iter().zip(&again) {
            assert_eq!(a.as_ref().unwrap().explanation.phi, b.as_ref().unwrap().explanation.phi);
        }
    }

    #[test]
    fn batch_independent_of_thread_count() {
        let m = FnModel::regression(3, |x| x[0] * x[1] + x[2].cos());
        let rows = Matrix::from_vec(6, 3, RandomStream::new(5).draw_gaussian(18)).unwrap();
        let features = compute_feature_meta(&rows, &["a".into(), "b".into(), "c".into()]);
        let cfg = LimaseConfig { n_samples: 150, seed: 3, ..Default::default() };
        let phis = |t: usize| -> Vec<Vec<f64>> {
            par::with_threads(t, || limase_explain_batch(&m, &rows, &features, &cfg))
                .into_iter()
                .map(|r| r.unwrap().explanation.phi)
                .collect()
        };
        assert_eq!(phis(1), phis(4));
    }

    #[test]
    fn batch_collects_errors() {
        let m = FnModel::regression(1, |x| if x[0] > 100.0 { f64::NAN } else { x[0] });
        let rows = Matrix::from_rows(&[vec![0.0], vec![1000.0]]).unwrap();
        let f = meta(&[1.0]);
        let out = limase_explain_batch(&m, &rows, &f, &LimaseConfig::default());
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(Error::Instance { index: 1, .. })));
    }

    #[test]
    fn sweep_single_sigma_matches_explain() {
        let m = FnModel::regression(2, |x| x[0] * x[1]);
        let f = meta(&[1.0, 1.0]);
        let cfg = LimaseConfig { n_samples: 300, seed: 4, ..Default::default() };
        let sweep = sigma_sweep(&m, &[0.5, 0.5], &f, &cfg, &[2.0]).unwrap();
        let single = limase_explain(&m, &[0.5, 0.5], &f, &cfg.with_sigma(2.0)).unwrap();
        assert_eq!(sweep[0].result.explanation.phi, single.explanation.phi);
        assert!(sigma_sweep(&m, &[0.5, 0.5], &f, &cfg, &[]).is_err());
        assert!(sigma_sweep(&m, &[0.5, 0.5], &f, &cfg, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn sampling_centres() {
        let m = FnModel::regression(3, |x| x[0]);
        let mut f = meta(&[1.0, 2.0, 0.0]);
        f[0].mean = 10.0;
        f[1].mean = -4.0;
        let x = [0.0, 0.0, 3.0];
        let n = 20_000;
        let mean_of = |set: &PerturbationSet, j: usize| set.rows.column(j)[1..].iter().sum::<f64>() / (n - 1) as f64;

        let cfg = LimaseConfig { n_samples: n, ..Default::default() };
        let data = build_perturbations(&m, &x, &f, &cfg, OutputTarget::Value).unwrap();
        assert_eq!(data.rows.row(0), &x);
        assert!((mean_of(&data, 0) - 10.0).abs() < 0.05);
        assert!((mean_of(&data, 1) + 4.0).abs() < 0.1);
        assert!(data.rows.column(2).iter().all(|v| *v == 3.0));

        let cfg = LimaseConfig { center: SampleCenter::Instance, ..cfg };
        let inst = build_perturbations(&m, &x, &f, &cfg, OutputTarget::Value).unwrap();
        assert!(mean_of(&inst, 0).abs() < 0.05);
        let direct = sample_around(&x, &f, n - 1, &mut RandomStream::new(cfg.seed)).unwrap();
        assert_eq!(&inst.rows.as_slice()[3..], direct.as_slice());
    }

    #[test]
    fn tiny_sigma_concentrates_weight_on_anchor() {
        let m = FnModel::regression(2, |x| x[0] + x[1]);
        let f = meta(&[1.0, 1.0]);
        let cfg = LimaseConfig { n_samples: 500, ..Default::default() }.with_sigma(0.01);
        let set = build_perturbations(&m, &[0.0, 0.0], &f, &cfg, OutputTarget::Value).unwrap();
        // Only the anchor coincides with x.
        let ess = set.effective_sample_size();
        assert!((ess - 1.0).abs() < 0.05, "ess {ess}");
        assert!(set.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
        let wide = build_perturbations(&m, &[0.0, 0.0], &f, &cfg.with_sigma(1e9), OutputTarget::Value).unwrap();
        assert!((wide.effective_sample_size() - 500.0).abs() < 1e-6);
    }
}
