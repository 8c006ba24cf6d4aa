//! The black-box model interface every explainer talks to.

use crate::data::{Matrix, Task};
use crate::error::{Error, Result};

/// Model outputs, one row per input row: width 1 for regression,
/// `n_classes` probabilities for classification.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub values: Matrix,
}

impl ModelOutput {
    pub fn validate(&self, task: Task, n_rows: usize) -> Result<()> {
        if self.values.nrows() != n_rows {
            return Err(Error::DimensionMismatch {
                expected: n_rows,
                got: self.values.nrows(),
            });
        }
        if self.values.ncols() != task.output_width() {
            return Err(Error::DimensionMismatch {
                expected: task.output_width(),
                got: self.values.ncols(),
            });
        }
        if self.values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(())
    }
}

/// A pure predictor: identical batches must produce identical outputs.
pub trait BlackBoxModel: Send + Sync {
    fn task(&self) -> Task;

    fn n_features(&self) -> usize;

    fn predict(&self, rows: &Matrix) -> Result<ModelOutput>;

    fn predict_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_rows(&[row])?;
        Ok(self.predict(&m)?.values.row(0).to_vec())
    }
}

impl<M: BlackBoxModel + ?Sized> BlackBoxModel for &M {
    fn task(&self) -> Task {
        (**self).task()
    }
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn predict(&self, rows: &Matrix) -> Result<ModelOutput> {
        (**self).predict(rows)
    }
}

impl<M: BlackBoxModel + ?Sized> BlackBoxModel for Box<M> {
    fn task(&self) -> Task {
        (**self).task()
    }
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn predict(&self, rows: &Matrix) -> Result<ModelOutput> {
        (**self).predict(rows)
    }
}

/// Which scalar of the model output is being explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTarget {
    Value,
    Class(usize),
}

impl OutputTarget {
    pub fn column(&self) -> usize {
        match self {
            OutputTarget::Value => 0,
            OutputTarget::Class(c) => *c,
        }
    }

    pub fn class_index(&self) -> Option<usize> {
        match self {
            OutputTarget::Value => None,
            OutputTarget::Class(c) => Some(*c),
        }
    }
}

/// Validates `class_index` against the task; classification defaults to the
/// class the model predicts at `x`.
pub fn resolve_target(
    model: &dyn BlackBoxModel,
    x: &[f64],
    class_index: Option<usize>,
) -> Result<OutputTarget> {
    match (model.task(), class_index) {
        (Task::Regression, None) => Ok(OutputTarget::Value),
        (Task::Regression, Some(_)) => Err(Error::ClassForRegression),
        (Task::Classification { n_classes }, Some(c)) if c >= n_classes => {
            Err(Error::ClassOutOfRange { index: c, n_classes })
        }
        (Task::Classification { .. }, Some(c)) => Ok(OutputTarget::Class(c)),
        (Task::Classification { .. }, None) => {
            let probs = model.predict_row(x)?;
            Ok(OutputTarget::Class(argmax(&probs)))
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicts and extracts one output column.
pub fn predict_scalar(
    model: &dyn BlackBoxModel,
    rows: &Matrix,
    target: OutputTarget,
) -> Result<Vec<f64>> {
    if rows.ncols() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: rows.ncols(),
        });
    }
    let out = model.predict(rows)?;
    out.validate(model.task(), rows.nrows())?;
    Ok(out.values.column(target.column()))
}

type RowFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Wraps a closure as a black-box model.
pub struct FnModel {
    task: Task,
    n_features: usize,
    f: Box<RowFn>,
}

impl FnModel {
    pub fn new(
        task: Task,
        n_features: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            task,
            n_features,
            f: Box::new(f),
        }
    }

    /// Scalar regression model.
    pub fn regression(
        n_features: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(Task::Regression, n_features, move |x| vec![f(x)])
    }
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel")
            .field("task", &self.task)
            .field("n_features", &self.n_features)
            .finish()
    }
}

impl BlackBoxModel for FnModel {
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
            let out = (self.f)(r);
            if out.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: out.len(),
                });
            }
            data.extend(out);
        }
        Ok(ModelOutput {
            values: Matrix::from_vec(rows.nrows(), width, data)?,
        })
    }
}
