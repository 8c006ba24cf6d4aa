//! Trainable models: the weighted CART tree (surrogate and forest member),
//! random forests, a small MLP, and external-process models.

pub mod external;
pub mod forest;
pub mod mlp;
pub mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Matrix, Task};
use crate::error::{Error, Result};
use crate::model::{BlackBoxModel, ModelOutput};

pub use external::{attach_external, serve_model, ExternalModel};
pub use forest::{fit_random_forest, ForestModel, ForestParams};
pub use mlp::{fit_mlp, MlpModel, MlpParams};
pub use tree::{fit_tree, predict_tree, DecisionTree, NodeKind, TreeNode, TreeParams};

/// A single regression tree used directly as a model.
impl BlackBoxModel for DecisionTree {
    fn task(&self) -> Task {
        Task::Regression
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, rows: &Matrix) -> Result<ModelOutput> {
        let values = self.predict_batch(rows)?;
        Ok(ModelOutput {
            values: Matrix::from_vec(values.len(), 1, values)?,
        })
    }
}

/// Serialisable trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    /// One unbootstrapped tree using every feature, stored as a forest of size one.
    Tree(ForestModel),
    Forest(ForestModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Tree(_) => "tree",
            Model::Forest(_) => "forest",
            Model::Mlp(_) => "mlp",
        }
    }

    pub fn as_forest(&self) -> Option<&ForestModel> {
        match self {
            Model::Tree(f) | Model::Forest(f) => Some(f),
            Model::Mlp(_) => None,
        }
    }

    fn inner(&self) -> &dyn BlackBoxModel {
        match self {
            Model::Tree(f) | Model::Forest(f) => f,
            Model::Mlp(m) => m,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl BlackBoxModel for Model {
    fn task(&self) -> Task {
        self.inner().task()
    }

    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn predict(&self, rows: &Matrix) -> Result<ModelOutput> {
        self.inner().predict(rows)
    }
}
