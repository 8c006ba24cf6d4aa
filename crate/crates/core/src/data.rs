//! Datasets, per-feature statistics, and CSV ingestion.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from row vectors; all rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Empty matrix with a fixed column count.
    pub fn empty(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub index: usize,
    pub mean: f64,
    /// Population standard deviation (divide by n).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

impl Task {
    /// Width of the model output row.
    pub fn output_width(&self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { n_classes } => *n_classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification { .. } => "classification",
        }
    }
}

/// Task requested at load time; the class count is inferred from the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "classification" => Ok(TaskKind::Classification),
            other => Err(Error::InvalidParameter(format!("unknown task `{other}`"))),
        }
    }
}

/// Computes mean, population std, min and max for each column.
pub fn compute_feature_meta(rows: &Matrix, names: &[String]) -> Vec<FeatureMeta> {
    let n = rows.nrows();
    (0..rows.ncols())
        .map(|j| {
            let col = rows.column(j);
            let (mean, std, min, max) = if n == 0 {
                (0.0, 0.0, 0.0, 0.0)
            } else {
                let mean = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                // Summation rounding can push the mean a hair outside [min, max].
                (mean.clamp(min, max), var.sqrt(), min, max)
            };
            FeatureMeta {
                name: names.get(j).cloned().unwrap_or_else(|| format!("x{j}")),
                index: j,
                mean,
                std,
                min,
                max,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<FeatureMeta>,
    pub rows: Matrix,
    pub target: Vec<f64>,
    pub target_name: String,
    pub task: Task,
}

impl Dataset {
    /// Validates the inputs and computes feature statistics.
    pub fn new(
        names: Vec<String>,
        rows: Matrix,
        target: Vec<f64>,
        target_name: impl Into<String>,
        task: Task,
    ) -> Result<Self> {
        if names.len() != rows.ncols() {
            return Err(Error::DimensionMismatch {
                expected: rows.ncols(),
                got: names.len(),
            });
        }
        if target.len() != rows.nrows() {
            return Err(Error::DimensionMismatch {
                expected: rows.nrows(),
                got: target.len(),
            });
        }
        if rows.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature rows".into()));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target".into()));
        }
        if let Task::Classification { n_classes } = task {
            for (row, &t) in target.iter().enumerate() {
                if t < 0.0 || t.fract() != 0.0 || t as usize >= n_classes {
                    return Err(Error::NonIntegralTarget { row, value: t });
                }
            }
        }
        let features = compute_feature_meta(&rows, &names);
        Ok(Self {
            features,
            rows,
            target,
            target_name: target_name.into(),
            task,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Sub-dataset with the given rows; statistics are recomputed.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.feature_names(),
            self.rows.select_rows(idx),
            idx.iter().map(|&i| self.target[i]).collect(),
            self.target_name.clone(),
            self.task,
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut header = self.feature_names();
        header.push(self.target_name.clone());
        writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for (row, t) in self.rows.iter_rows().zip(&self.target) {
            let mut cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            cells.push(format!("{t:?}"));
            writeln!(w, "{}", cells.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a headed, comma-separated numeric CSV. Row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, task: TaskKind) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Empty(format!("{} has no header", path.display())));
    }
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingTarget(target_column.to_string()))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut data = Vec::new();
    let mut target = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: row_no + 1,
                column: headers[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row: row_no + 1,
                    column: headers[j].clone(),
                    value: cell.to_string(),
                });
            }
            if j == target_idx {
                target.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if target.is_empty() {
        return Err(Error::Empty(format!("{} has no data rows", path.display())));
    }
    let n = target.len();
    let rows = Matrix::from_vec(n, names.len(), data)?;
    let task = match task {
        TaskKind::Regression => Task::Regression,
        TaskKind::Classification => {
            for (row, &t) in target.iter().enumerate() {
                if t < 0.0 || t.fract() != 0.0 {
                    return Err(Error::NonIntegralTarget {
                        row: row + 1,
                        value: t,
                    });
                }
            }
            let n_classes = target.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
            Task::Classification { n_classes }
        }
    };
    Dataset::new(names, rows, target, target_column, task)
}

/// `(x_j - mean_j) / std_j`, with zero-variance features mapped to 0.
pub fn standardize(x: &[f64], features: &[FeatureMeta]) -> Result<Vec<f64>> {
    if x.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: x.len(),
        });
    }
    Ok(x.iter()
        .zip(features)
        .map(|(&v, f)| {
            if f.std > 0.0 {
                (v - f.mean) / f.std
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary<'a> {
    pub n_samples: usize,
    pub n_features: usize,
    pub target: &'a str,
    pub task: Task,
    pub features: &'a [FeatureMeta],
}

impl Dataset {
    pub fn summary(&self) -> DatasetSummary<'_> {
        DatasetSummary {
            n_samples: self.n_samples(),
            n_features: self.n_features(),
            target: &self.target_name,
            task: self.task,
            features: &self.features,
        }
    }
}
