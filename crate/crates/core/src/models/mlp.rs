//! A small multilayer perceptron: ReLU hidden layers, softmax (classification)
//! or identity (regression) output, trained with plain mini-batch SGD.
//!
//! Inputs are standardised with the training statistics and regression
//! targets are scaled to unit variance; both transforms live in the model.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix, Task};
use crate::error::{Error, Result};
use crate::model::{BlackBoxModel, ModelOutput};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16],
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.bias[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub task: Task,
    pub layers: Vec<DenseLayer>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

impl MlpModel {
    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].n_in];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Activations of every layer for one normalised input; the last entry
    /// is the output layer before softmax / target rescaling.
    fn activations(&self, input: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.forward(acts.last().expect("input pushed"), &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    fn output_of(&self, mut raw: Vec<f64>) -> Vec<f64> {
        match self.task {
            Task::Classification { .. } => {
                softmax_in_place(&mut raw);
                raw
            }
            Task::Regression => vec![self.target_mean + self.target_scale * raw[0]],
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, weights then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_parameters());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.n_parameters(),
                got: p.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Mean training loss and its gradient with respect to [`Self::parameters`].
    ///
    /// Cross-entropy for classification (`y` holds class labels), half squared
    /// error on the scaled target for regression.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let idx: Vec<usize> = (0..x.nrows()).collect();
        self.batch_gradient(x, y, &idx)
    }

    fn batch_gradient(&self, x: &Matrix, y: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        if x.ncols() != self.input_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_mean.len(),
                got: x.ncols(),
            });
        }
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in batch {
            let acts = self.activations(self.normalize(x.row(i)));
            let raw = acts.last().expect("output layer");
            let mut delta: Vec<f64> = match self.task {
                Task::Classification { .. } => {
                    let mut p = raw.clone();
                    softmax_in_place(&mut p);
                    let c = y[i] as usize;
                    loss -= p[c].max(1e-300).ln();
                    p[c] -= 1.0;
                    p
                }
                Task::Regression => {
                    let t = (y[i] - self.target_mean) / self.target_scale;
                    let e = raw[0] - t;
                    loss += 0.5 * e * e;
                    vec![e]
                }
            };
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = &acts[l];
                let (gw, gb) = &mut grads[l];
                for o in 0..layer.n_out {
                    gb[o] += delta[o] * scale;
                    let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += delta[o] * a * scale;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.n_in];
                    for o in 0..layer.n_out {
                        let w = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                        for (p, wv) in prev.iter_mut().zip(w) {
                            *p += delta[o] * wv;
                        }
                    }
                    // ReLU derivative of the previous layer's output.
                    for (p, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_parameters());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        Ok((loss * scale, flat))
    }
}

impl BlackBoxModel for MlpModel {
    fn task(&self) -> Task {
        self.task
    }

    fn n_features(&self) -> usize {
        self.input_mean.len()
    }

    fn predict(&self, rows: &Matrix) -> Result<ModelOutput> {
        if rows.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: rows.ncols(),
            });
        }
        let width = self.task.output_width();
        let mut data = Vec::with_capacity(rows.nrows() * width);
        let last = self.layers.len() - 1;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for r in rows.iter_rows() {
            a.clear();
            a.extend(self.normalize(r));
            for (l, layer) in self.layers.iter().enumerate() {
                layer.forward(&a, &mut b);
                if l < last {
                    b.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                std::mem::swap(&mut a, &mut b);
            }
            data.extend(self.output_of(a.clone()));
        }
        Ok(ModelOutput {
            values: Matrix::from_vec(rows.nrows(), width, data)?,
        })
    }
}

/// He-initialised network with the dataset's normalisation statistics.
pub fn init_mlp(data: &Dataset, hidden: &[usize], rng: &mut RandomStream) -> Result<MlpModel> {
    let d = data.n_features();
    if d == 0 {
        return Err(Error::Empty("feature set".into()));
    }
    if hidden.contains(&0) {
        return Err(Error::InvalidParameter("hidden widths must be >= 1".into()));
    }
    let mut widths = vec![d];
    widths.extend_from_slice(hidden);
    widths.push(data.task.output_width());
    let layers = widths
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let std = (2.0 / n_in as f64).sqrt();
            DenseLayer {
                n_in,
                n_out,
                weights: rng.draw_gaussian(n_in * n_out).into_iter().map(|g| g * std).collect(),
                bias: vec![0.0; n_out],
            }
        })
        .collect();
    let input_mean = data.features.iter().map(|f| f.mean).collect();
    let input_scale = data
        .features
        .iter()
        .map(|f| if f.std > 0.0 { f.std } else { 1.0 })
        .collect();
    let (target_mean, target_scale) = match data.task {
        Task::Regression if !data.target.is_empty() => {
            let n = data.target.len() as f64;
            let m = data.target.iter().sum::<f64>() / n;
            let s = (data.target.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, if s > 0.0 { s } else { 1.0 })
        }
        _ => (0.0, 1.0),
    };
    Ok(MlpModel {
        task: data.task,
        layers,
        input_mean,
        input_scale,
        target_mean,
        target_scale,
    })
}

/// Trains with mini-batch SGD. Returns the model whatever loss is reached.
pub fn fit_mlp(data: &Dataset, params: &MlpParams, rng: &mut RandomStream) -> Result<MlpModel> {
    if params.epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be >= 1".into()));
    }
    if params.batch_size == 0 || !(params.learning_rate > 0.0) {
        return Err(Error::InvalidParameter(
            "batch_size must be >= 1 and learning_rate > 0".into(),
        ));
    }
    if data.n_samples() == 0 {
        return Err(Error::Empty("dataset".into()));
    }
    let mut model = init_mlp(data, &params.hidden, rng)?;
    let n = data.n_samples();
    let mut order: Vec<usize> = (0..n).collect();
    let mut p = model.parameters();
    for _ in 0..params.epochs {
        for i in (1..n).rev() {
            order.swap(i, rng.below(i + 1));
        }
        for batch in order.chunks(params.batch_size) {
            let (_, g) = model.batch_gradient(&data.rows, &data.target, batch)?;
            for (pv, gv) in p.iter_mut().zip(&g) {
                *pv -= params.learning_rate * gv;
            }
            model.set_parameters(&p)?;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor(n: usize, seed: u64) -> Dataset {
        let mut rng = RandomStream::new(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let (a, b) = ((i % 2) as f64, ((i / 2) % 2) as f64);
            rows.push(vec![a + 0.1 * rng.gaussian(), b + 0.1 * rng.gaussian()]);
            y.push(if (a == 1.0) != (b == 1.0) { 1.0 } else { 0.0 });
        }
        Dataset::new(
            vec!["a".into(), "b".into()],
            Matrix::from_rows(&rows).unwrap(),
            y,
            "xor",
            Task::Classification { n_classes: 2 },
        )
        .unwrap()
    }

    #[test]
    fn one_epoch_is_well_formed() {
        let ds = xor(40, 1);
        let params = MlpParams { hidden: vec![4], epochs: 1, ..Default::default() };
        let m = fit_mlp(&ds, &params, &mut RandomStream::new(2)).unwrap();
        assert!(m.parameters().iter().all(|p| p.is_finite()));
        let out = m.predict(&ds.rows).unwrap();
        out.validate(ds.task, ds.n_samples()).unwrap();
        for row in out.values.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let zero = MlpParams { epochs: 0, ..params };
        assert!(fit_mlp(&ds, &zero, &mut RandomStream::new(2)).is_err());
    }

    #[test]
    fn learns_xor() {
        let ds = xor(200, 3);
        let params = MlpParams { hidden: vec![8], epochs: 500, learning_rate: 0.1, batch_size: 16 };
        let m = fit_mlp(&ds, &params, &mut RandomStream::new(4)).unwrap();
        let out = m.predict(&ds.rows).unwrap();
        let correct = (0..ds.n_samples())
            .filter(|&i| crate::model::argmax(out.values.row(i)) as f64 == ds.target[i])
            .count();
        let acc = correct as f64 / ds.n_samples() as f64;
        assert!(acc >= 0.9, "accuracy {acc}");
    }

    fn finite_difference_check(task: Task, y: Vec<f64>) {
        let rows = vec![vec![0.3, -1.2], vec![1.1, 0.4], vec![-0.7, 0.9]];
        let ds = Dataset::new(
            vec!["a".into(), "b".into()],
            Matrix::from_rows(&rows).unwrap(),
            y.clone(),
            "y",
            task,
        )
        .unwrap();
        for seed in 0..5 {
            let mut m = init_mlp(&ds, &[2], &mut RandomStream::new(seed)).unwrap();
            let mut rng = RandomStream::new(100 + seed);
            let p0: Vec<f64> = (0..m.n_parameters()).map(|_| rng.gaussian()).collect();
            m.set_parameters(&p0).unwrap();
            let (_, grad) = m.loss_and_gradient(&ds.rows, &y).unwrap();
            let h = 1e-5;
            for k in 0..p0.len() {
                let mut p = p0.clone();
                p[k] += h;
                m.set_parameters(&p).unwrap();
                let (up, _) = m.loss_and_gradient(&ds.rows, &y).unwrap();
                p[k] -= 2.0 * h;
                m.set_parameters(&p).unwrap();
                let (down, _) = m.loss_and_gradient(&ds.rows, &y).unwrap();
                let numeric = (up - down) / (2.0 * h);
                let denom = numeric.abs().max(grad[k].abs()).max(1e-8);
                let rel = (numeric - grad[k]).abs() / denom;
                assert!(
                    rel <= 1e-4 || (numeric - grad[k]).abs() < 1e-9,
                    "param {k}: analytic {} numeric {numeric}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_classification() {
        finite_difference_check(Task::Classification { n_classes: 2 }, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_matches_finite_differences_regression() {
        finite_difference_check(Task::Regression, vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = xor(40, 1);
        let params = MlpParams { hidden: vec![4], epochs: 3, ..Default::default() };
        let a = fit_mlp(&ds, &params, &mut RandomStream::new(9)).unwrap();
        let b = fit_mlp(&ds, &params, &mut RandomStream::new(9)).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_eq!(a.widths(), vec![2, 4, 2]);
    }

    #[test]
    fn dimension_mismatch() {
        let ds = xor(8, 1);
        let m = init_mlp(&ds, &[3], &mut RandomStream::new(0)).unwrap();
        assert!(m.predict(&Matrix::zeros(2, 3)).is_err());
    }
}
