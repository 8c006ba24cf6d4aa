use std::time::Instant;

use crate::data::Task;
use crate::error::{Error, Result};
use crate::model::{argmax, BlackBoxModel};
use crate::models::forest::ForestModel;
use crate::shapley::brute::conditional;
use crate::shapley::explanation::{default_names, ShapExplanation};
use crate::shapley::tree_shap::tree_shap_values;

/// Mean of member-tree explanations. For classification this explains the
/// selected class's averaged score before renormalisation; the default class
/// is the forest's prediction at `x`.
pub fn forest_shap(
    forest: &ForestModel,
    x: &[f64],
    class_index: Option<usize>,
) -> Result<ShapExplanation> {
    if forest.n_trees() == 0 {
        return Err(Error::Empty("forest".into()));
    }
    if x.len() != forest.n_features {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            got: x.len(),
        });
    }
    let start = Instant::now();
    let group = match (forest.task, class_index) {
        (Task::Regression, None) => 0,
        (Task::Regression, Some(_)) => return Err(Error::ClassForRegression),
        (Task::Classification { n_classes }, Some(c)) if c >= n_classes => {
            return Err(Error::ClassOutOfRange { index: c, n_classes })
        }
        (Task::Classification { .. }, Some(c)) => c,
        (Task::Classification { .. }, None) => argmax(&forest.predict_row(x)?),
    };
    let trees = &forest.groups[group];
    let n = trees.len() as f64;
    let mut phi = vec![0.0; forest.n_features];
    let mut base = 0.0;
    for t in trees {
        for (p, v) in phi.iter_mut().zip(tree_shap_values(t, x)) {
            *p += v;
        }
        base += conditional(t, x, 0, t.root);
    }
    phi.iter_mut().for_each(|p| *p /= n);
    Ok(ShapExplanation {
        explainer: "treeshap".into(),
        base_value: base / n,
        fx: forest.raw_score(group, x),
        phi,
        feature_names: default_names(forest.n_features),
        instance: x.to_vec(),
        class_index: matches!(forest.task, Task::Classification { .. }).then_some(group),
        elapsed_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    })
}
