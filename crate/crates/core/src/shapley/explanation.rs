use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base value, per-feature attributions and the explained output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub explainer: String,
    pub base_value: f64,
    pub fx: f64,
    pub phi: Vec<f64>,
    pub feature_names: Vec<String>,
    pub instance: Vec<f64>,
    /// Class whose output is explained; `None` for regression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_index: Option<usize>,
    #[serde(default)]
    pub elapsed_ms: Option<f64>,
}

impl ShapExplanation {
    pub fn phi_sum(&self) -> f64 {
        self.phi.iter().sum()
    }

    /// `base_value + sum(phi) - fx`.
    pub fn efficiency_gap(&self) -> f64 {
        self.base_value + self.phi_sum() - self.fx
    }

    /// Checks the additivity identity with a relative tolerance.
    pub fn check_efficiency(&self, rel_tol: f64) -> Result<()> {
        let scale = self
            .fx
            .abs()
            .max(self.base_value.abs())
            .max(self.phi.iter().map(|p| p.abs()).sum::<f64>())
            .max(1.0);
        if self.efficiency_gap().abs() <= rel_tol * scale {
            Ok(())
        } else {
            Err(Error::Efficiency {
                base: self.base_value,
                sum: self.phi_sum(),
                fx: self.fx,
            })
        }
    }

    pub fn with_names(mut self, names: &[String]) -> Self {
        self.feature_names = names.to_vec();
        self
    }

    /// Feature indices ordered by |phi| descending, lowest index first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.phi.len()).collect();
        idx.sort_by(|&a, &b| self.phi[b].abs().total_cmp(&self.phi[a].abs()).then(a.cmp(&b)));
        idx
    }
}

pub(crate) fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}
