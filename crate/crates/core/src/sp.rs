//! Submodular pick: choose a small set of instances whose explanations
//! together cover the globally important features.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::limase::{limase_explain_batch, LimaseConfig};
use crate::model::BlackBoxModel;

/// How negative attributions enter importance and coverage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpMode {
    /// `I_j = sqrt(sum_i |S_ij|)`, feature covered when `|S_ij| > 0`.
    #[default]
    Absolute,
    /// `I_j = sqrt(sum_i S_ij)` (error if negative), covered when `S_ij > 0`.
    Literal,
}

/// Row `i` holds the attributions of instance `instances[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMatrix {
    pub values: Matrix,
    pub instances: Vec<usize>,
}

impl ExplanationMatrix {
    pub fn new(values: Matrix, instances: Vec<usize>) -> Result<Self> {
        if instances.len() != values.nrows() {
            return Err(Error::DimensionMismatch {
                expected: values.nrows(),
                got: instances.len(),
            });
        }
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("explanation matrix".into()));
        }
        Ok(Self { values, instances })
    }

    /// Rows indexed `0..n`.
    pub fn from_values(values: Matrix) -> Result<Self> {
        let n = values.nrows();
        Self::new(values, (0..n).collect())
    }

    pub fn n_instances(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    fn touches(&self, i: usize, j: usize, mode: SpMode) -> bool {
        let v = self.values.get(i, j);
        match mode {
            SpMode::Absolute => v.abs() > 0.0,
            SpMode::Literal => v > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpResult {
    /// Matrix rows in greedy order.
    pub selected: Vec<usize>,
    /// Instance ids of the selected rows.
    pub instances: Vec<usize>,
    pub importance: Vec<f64>,
    pub coverage_history: Vec<f64>,
    pub budget: usize,
}

pub fn feature_importance(s: &ExplanationMatrix) -> Result<Vec<f64>> {
    feature_importance_with(s, SpMode::Absolute)
}

pub fn feature_importance_with(s: &ExplanationMatrix, mode: SpMode) -> Result<Vec<f64>> {
    if s.n_instances() == 0 {
        return Err(Error::Empty("explanation matrix".into()));
    }
    (0..s.n_features())
        .map(|j| {
            let col = s.values.column(j);
            let total: f64 = match mode {
                SpMode::Absolute => col.iter().map(|v| v.abs()).sum(),
                SpMode::Literal => col.iter().sum(),
            };
            if total < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "feature {j} has negative attribution sum {total}; use absolute mode"
                )));
            }
            Ok(total.sqrt())
        })
        .collect()
}

pub fn coverage(picked: &[usize], s: &ExplanationMatrix, importance: &[f64]) -> Result<f64> {
    coverage_with(picked, s, importance, SpMode::Absolute)
}

pub fn coverage_with(
    picked: &[usize],
    s: &ExplanationMatrix,
    importance: &[f64],
    mode: SpMode,
) -> Result<f64> {
    if importance.len() != s.n_features() {
        return Err(Error::DimensionMismatch {
            expected: s.n_features(),
            got: importance.len(),
        });
    }
    if let Some(&i) = picked.iter().find(|&&i| i >= s.n_instances()) {
        return Err(Error::IndexOutOfRange { index: i, n: s.n_instances() });
    }
    Ok((0..s.n_features())
        .filter(|&j| picked.iter().any(|&i| s.touches(i, j, mode)))
        .map(|j| importance[j])
        .sum())
}

pub fn submodular_pick(s: &ExplanationMatrix, budget: usize) -> Result<SpResult> {
    submodular_pick_with(s, budget, SpMode::Absolute)
}

pub fn submodular_pick_with(s: &ExplanationMatrix, budget: usize, mode: SpMode) -> Result<SpResult> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    let importance = feature_importance_with(s, mode)?;
    let n = s.n_instances();
    let d = s.n_features();
    let target = budget.min(n);
    let mut covered = vec![false; d];
    let mut taken = vec![false; n];
    let mut selected = Vec::with_capacity(target);
    let mut history = Vec::with_capacity(target);

    while selected.len() < target {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let gain: f64 = (0..d)
                .filter(|&j| !covered[j] && s.touches(i, j, mode))
                .map(|j| importance[j])
                .sum();
            if gain > 0.0 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let Some((pick, _)) = best else { break };
        taken[pick] = true;
        for (j, c) in covered.iter_mut().enumerate() {
            *c |= s.touches(pick, j, mode);
        }
        selected.push(pick);
        history.push(coverage_with(&selected, s, &importance, mode)?);
    }
    // Nothing left to gain: fill the budget in index order.
    let last = history.last().copied().unwrap_or(0.0);
    for i in 0..n {
        if selected.len() == target {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            selected.push(i);
            history.push(last);
        }
    }
    Ok(SpResult {
        instances: selected.iter().map(|&i| s.instances[i]).collect(),
        selected,
        importance,
        coverage_history: history,
        budget,
    })
}

/// Explains the rows `sample_indices` of `data`, then picks `budget` of them.
pub fn sp_explain(
    model: &dyn BlackBoxModel,
    data: &Dataset,
    sample_indices: &[usize],
    config: &LimaseConfig,
    budget: usize,
    mode: SpMode,
) -> Result<(SpResult, ExplanationMatrix)> {
    if sample_indices.is_empty() {
        return Err(Error::Empty("sample indices".into()));
    }
    if let Some(&i) = sample_indices.iter().find(|&&i| i >= data.n_samples()) {
        return Err(Error::IndexOutOfRange { index: i, n: data.n_samples() });
    }
    let rows = data.rows.select_rows(sample_indices);
    let mut values = Matrix::empty(data.n_features());
    for r in limase_explain_batch(model, &rows, &data.features, config) {
        values.push_row(&r?.explanation.phi)?;
    }
    let matrix = ExplanationMatrix::new(values, sample_indices.to_vec())?;
    let result = submodular_pick_with(&matrix, budget, mode)?;
    Ok((result, matrix))
}
