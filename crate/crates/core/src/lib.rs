//! Model-agnostic Shapley explanations from local surrogate trees.
//!
//! A black-box model is probed with Gaussian perturbations, the samples are
//! weighted with an exponential distance kernel around the instance, a weighted
//! regression tree is fit to the model's outputs, and the tree is explained
//! exactly with TreeSHAP. Submodular pick selects a small, diverse set of
//! explanations for global interpretation.

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod models;
pub mod par;
pub mod rng;
pub mod limase;
pub mod shapley;
pub mod sp;
pub mod synth;
pub mod viz;

pub use data::{load_csv, standardize, Dataset, FeatureMeta, Matrix, Task, TaskKind};
pub use error::{Error, Result};
pub use model::{BlackBoxModel, FnModel, ModelOutput, OutputTarget};
pub use rng::RandomStream;
