//! Exact and approximate Shapley attribution.

mod brute;
mod explanation;
mod forest;
mod kernel;
mod tree_shap;

pub use brute::{
    shapley_brute_force, tree_conditional_value, CoalitionValueFn, MAX_ENUMERATION_FEATURES,
};
pub use explanation::ShapExplanation;
pub use forest::forest_shap;
pub use kernel::{kernel_shap, KernelBudget, KERNEL_EXACT_MAX_FEATURES};
pub use tree_shap::{tree_shap, tree_shap_values};
