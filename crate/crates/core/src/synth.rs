//! Seeded synthetic tabular datasets for demos, tests and benchmarks.
//!
//! Features are independent standard normals. The target depends on the
//! features with geometrically decaying weights `3 * 0.8^j`, so feature 0 is
//! always the strongest driver.

use crate::data::{Dataset, Matrix, Task};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub fn coefficients(d: usize) -> Vec<f64> {
    (0..d).map(|j| 3.0 * 0.8f64.powi(j as i32)).collect()
}

fn features(n: usize, d: usize, rng: &mut RandomStream) -> Result<Matrix> {
    Matrix::from_vec(n, d, rng.draw_gaussian(n * d))
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

fn check(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("synthetic data needs n >= 1 and d >= 1".into()));
    }
    Ok(())
}

/// `y = sum_j c_j x_j + 0.5 x0 x1 + 0.1 eps`.
pub fn synthetic_regression(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    check(n, d)?;
    let mut rng = RandomStream::new(seed);
    let x = features(n, d, &mut rng)?;
    let c = coefficients(d);
    let y = x
        .iter_rows()
        .map(|r| {
            let linear: f64 = r.iter().zip(&c).map(|(a, b)| a * b).sum();
            let inter = if d > 1 { 0.5 * r[0] * r[1] } else { 0.0 };
            linear + inter + 0.1 * rng.gaussian()
        })
        .collect();
    Dataset::new(names(d), x, y, "y", Task::Regression)
}

/// Labels are quantile bins of a noisy linear score, so classes are balanced.
pub fn synthetic_classification(n: usize, d: usize, n_classes: usize, seed: u64) -> Result<Dataset> {
    check(n, d)?;
    if n_classes < 2 {
        return Err(Error::InvalidParameter("need at least 2 classes".into()));
    }
    let mut rng = RandomStream::new(seed);
    let x = features(n, d, &mut rng)?;
    let c = coefficients(d);
    let score: Vec<f64> = x
        .iter_rows()
        .map(|r| r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + 0.3 * rng.gaussian())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    let mut y = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        y[i] = (rank * n_classes / n) as f64;
    }
    Dataset::new(names(d), x, y, "label", Task::Classification { n_classes })
}
