use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::limase::{LimaseConfig, SampleCenter, SigmaMode};
use crate::models::{ForestParams, MlpParams, TreeParams};
use crate::sp::SpMode;

/// Fully resolved settings of one run. Echoed into every JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    pub task: String,
    /// `tree`, `forest`, `mlp` or `external:<command>`.
    pub model: String,
    pub model_file: Option<PathBuf>,
    /// `limase`, `treeshap` or `kernelshap`.
    pub explainer: String,
    /// Kernel width; absent means the automatic width.
    pub sigma: Option<f64>,
    /// Perturbation centre: `data` (feature means) or `instance`.
    pub center: SampleCenter,
    pub n_samples: usize,
    pub surrogate_depth: usize,
    pub surrogate_min_leaf: usize,
    pub seed: u64,
    pub budget: usize,
    pub class: Option<usize>,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub count: usize,
    pub instance: usize,
    pub background: usize,
    pub kernel_samples: usize,
    pub sp_mode: SpMode,
    pub n_trees: usize,
    pub tree_depth: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_plot_features: usize,
    pub timing: bool,
    pub timeout_secs: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mlp = MlpParams::default();
        let forest = ForestParams::default();
        let surrogate = TreeParams::default();
        Self {
            data: None,
            target: None,
            task: "regression".into(),
            model: "forest".into(),
            model_file: None,
            explainer: "limase".into(),
            sigma: None,
            center: SampleCenter::default(),
            n_samples: LimaseConfig::default().n_samples,
            surrogate_depth: surrogate.max_depth,
            surrogate_min_leaf: surrogate.min_samples_leaf,
            seed: 0,
            budget: 10,
            class: None,
            out: PathBuf::from("out"),
            threads: None,
            count: 100,
            instance: 0,
            background: 100,
            kernel_samples: 2048,
            sp_mode: SpMode::Absolute,
            n_trees: forest.n_trees,
            tree_depth: forest.tree.max_depth,
            hidden: mlp.hidden,
            epochs: mlp.epochs,
            learning_rate: mlp.learning_rate,
            batch_size: mlp.batch_size,
            max_plot_features: crate::viz::DEFAULT_SUMMARY_FEATURES,
            timing: false,
            timeout_secs: crate::models::external::DEFAULT_TIMEOUT.as_secs(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the keys of a `key = value` file.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
        let mut merged = serde_json::to_value(RunConfig::default())?;
        let overlay = serde_json::to_value(table)?;
        if let (Some(base), Some(extra)) = (merged.as_object_mut(), overlay.as_object()) {
            for (k, v) in extra {
                base.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(merged).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !matches!(self.task.as_str(), "regression" | "classification") {
            bail!("unknown task `{}` (expected regression or classification)", self.task);
        }
        if !matches!(self.model.as_str(), "tree" | "forest" | "mlp") && !self.model.starts_with("external:") {
            bail!("unknown model `{}` (expected tree, forest, mlp or external:<command>)", self.model);
        }
        if !matches!(self.explainer.as_str(), "limase" | "treeshap" | "kernelshap") {
            bail!("unknown explainer `{}` (expected limase, treeshap or kernelshap)", self.explainer);
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) || !s.is_finite() {
                bail!("sigma must be a positive number, got {s}");
            }
        }
        if self.budget == 0 {
            bail!("budget must be >= 1");
        }
        if self.count == 0 {
            bail!("count must be >= 1");
        }
        if self.background == 0 {
            bail!("background must be >= 1");
        }
        if self.threads == Some(0) {
            bail!("threads must be >= 1");
        }
        self.limase_config().validate()?;
        Ok(())
    }

    pub fn limase_config(&self) -> LimaseConfig {
        LimaseConfig {
            n_samples: self.n_samples,
            sigma: self.sigma.map_or(SigmaMode::Auto, SigmaMode::Absolute),
            center: self.center,
            tree_params: TreeParams {
                max_depth: self.surrogate_depth,
                min_samples_leaf: self.surrogate_min_leaf,
                min_weight_fraction_leaf: 0.0,
            },
            seed: self.seed,
            class_index: self.class,
        }
    }

    pub fn forest_params(&self) -> ForestParams {
        let mut p = ForestParams { n_trees: self.n_trees, ..Default::default() };
        p.tree.max_depth = self.tree_depth;
        p
    }

    pub fn mlp_params(&self) -> MlpParams {
        MlpParams {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }

    pub fn external_command(&self) -> Option<&str> {
        self.model.strip_prefix("external:")
    }
}
