//! KernelSHAP baseline: Shapley-kernel weighted least squares over coalitions
//! of an interventional value function.
//!
//! `v(S)` is the mean model output over background rows with the features in
//! `S` replaced by those of `x`. The efficiency constraint is substituted
//! analytically by eliminating the last feature. Sampled mode draws coalition
//! sizes proportionally to the Shapley kernel and adds each subset together
//! with its complement.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::model::{predict_scalar, resolve_target, BlackBoxModel, OutputTarget};
use crate::par;
use crate::rng::RandomStream;
use crate::shapley::explanation::{default_names, ShapExplanation};

/// Largest feature count accepted by [`KernelBudget::Exact`].
pub const KERNEL_EXACT_MAX_FEATURES: usize = 16;

const COALITIONS_PER_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelBudget {
    /// Every proper, non-empty coalition.
    Exact,
    /// At most this many coalition evaluations; enumerates exactly when
    /// `2^d - 2` fits in the budget.
    Samples(usize),
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64)
}

fn shapley_kernel(d: usize, size: usize) -> f64 {
    (d - 1) as f64 / (binomial_f64(d, size) * size as f64 * (d - size) as f64)
}

fn enumerate(d: usize) -> (Vec<u64>, Vec<f64>) {
    let masks: Vec<u64> = (1..(1u64 << d) - 1).collect();
    let weights = masks
        .iter()
        .map(|m| shapley_kernel(d, m.count_ones() as usize))
        .collect();
    (masks, weights)
}

fn sample_pairs(d: usize, budget: usize, rng: &mut RandomStream) -> (Vec<u64>, Vec<f64>) {
    let size_weights: Vec<f64> = (1..d).map(|s| 1.0 / (s * (d - s)) as f64).collect();
    let total: f64 = size_weights.iter().sum();
    let full = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut masks = Vec::new();
    let mut weights = Vec::new();
    let mut add = |m: u64, masks: &mut Vec<u64>, weights: &mut Vec<f64>| match index.get(&m) {
        Some(&i) => weights[i] += 1.0,
        None => {
            index.insert(m, masks.len());
            masks.push(m);
            weights.push(1.0);
        }
    };
    for _ in 0..budget / 2 {
        let mut u = rng.uniform() * total;
        let mut size = d - 1;
        for (k, w) in size_weights.iter().enumerate() {
            if u < *w {
                size = k + 1;
                break;
            }
            u -= w;
        }
        let mut mask = 0u64;
        for j in rng.sample_indices(d, size) {
            mask |= 1 << j;
        }
        add(mask, &mut masks, &mut weights);
        add(full & !mask, &mut masks, &mut weights);
    }
    (masks, weights)
}

/// Mean output over the background for each coalition.
fn coalition_values(
    model: &dyn BlackBoxModel,
    x: &[f64],
    background: &Matrix,
    target: OutputTarget,
    masks: &[u64],
) -> Result<Vec<f64>> {
    let d = x.len();
    let nb = background.nrows();
    let chunks: Vec<&[u64]> = masks.chunks(COALITIONS_PER_BATCH).collect();
    let results = par::map_range(chunks.len(), |c| -> Result<Vec<f64>> {
        let chunk = chunks[c];
        let mut data = Vec::with_capacity(chunk.len() * nb * d);
        for &m in chunk {
            for b in background.iter_rows() {
                data.extend((0..d).map(|j| if m >> j & 1 == 1 { x[j] } else { b[j] }));
            }
        }
        let rows = Matrix::from_vec(chunk.len() * nb, d, data)?;
        let out = predict_scalar(model, &rows, target)?;
        Ok(out.chunks(nb).map(|v| v.iter().sum::<f64>() / nb as f64).collect())
    });
    let mut values = Vec::with_capacity(masks.len());
    for r in results {
        values.extend(r?);
    }
    Ok(values)
}

fn solve_constrained(
    d: usize,
    masks: &[u64],
    weights: &[f64],
    values: &[f64],
    base: f64,
    fx: f64,
) -> Vec<f64> {
    let delta = fx - base;
    let last = d - 1;
    let mut ata = DMatrix::<f64>::zeros(last, last);
    let mut atb = DVector::<f64>::zeros(last);
    let mut row = vec![0.0; last];
    for ((&m, &w), &v) in masks.iter().zip(weights).zip(values) {
        let z_last = (m >> last & 1) as f64;
        for (j, r) in row.iter_mut().enumerate() {
            *r = (m >> j & 1) as f64 - z_last;
        }
        let target = v - base - z_last * delta;
        for a in 0..last {
            if row[a] == 0.0 {
                continue;
            }
            atb[a] += w * row[a] * target;
            for b in 0..last {
                ata[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let head = ata
        .clone()
        .cholesky()
        .map(|c| c.solve(&atb))
        .or_else(|| ata.clone().lu().solve(&atb))
        .unwrap_or_else(|| {
            ata.svd(true, true)
                .solve(&atb, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(last))
        });
    let mut phi: Vec<f64> = head.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    phi
}

/// KernelSHAP explanation of `model` at `x` against `background`.
pub fn kernel_shap(
    model: &dyn BlackBoxModel,
    x: &[f64],
    background: &Matrix,
    budget: KernelBudget,
    rng: &mut RandomStream,
    class_index: Option<usize>,
) -> Result<ShapExplanation> {
    let d = model.n_features();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    if background.is_empty() {
        return Err(Error::Empty("background".into()));
    }
    if background.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: background.ncols() });
    }
    if d == 0 || d > 64 {
        return Err(Error::InvalidParameter(format!("kernel_shap supports 1..=64 features, got {d}")));
    }
    let start = Instant::now();
    let target = resolve_target(model, x, class_index)?;
    let x_row = Matrix::from_rows(&[x])?;
    let fx = predict_scalar(model, &x_row, target)?[0];
    let bg = predict_scalar(model, background, target)?;
    let base = bg.iter().sum::<f64>() / bg.len() as f64;

    let phi = if d == 1 {
        vec![fx - base]
    } else {
        let (masks, weights) = match budget {
            KernelBudget::Exact => {
                if d > KERNEL_EXACT_MAX_FEATURES {
                    return Err(Error::TooManyFeatures { d, max: KERNEL_EXACT_MAX_FEATURES });
                }
                enumerate(d)
            }
            KernelBudget::Samples(n) => {
                if n < 2 * d + 2 {
                    return Err(Error::InvalidParameter(format!(
                        "budget {n} is below 2d + 2 = {}",
                        2 * d + 2
                    )));
                }
                if d < 63 && (1u64 << d) - 2 <= n as u64 {
                    enumerate(d)
                } else {
                    sample_pairs(d, n, rng)
                }
            }
        };
        let values = coalition_values(model, x, background, target, &masks)?;
        solve_constrained(d, &masks, &weights, &values, base, fx)
    };
    Ok(ShapExplanation {
        explainer: "kernelshap".into(),
        base_value: base,
        fx,
        phi,
        feature_names: default_names(d),
        instance: x.to_vec(),
        class_index: target.class_index(),
        elapsed_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;

    #[test]
    fn kernel_weights() {
        // d = 3: (3-1)/(C(3,1)*1*2) = 1/3.
        assert!((shapley_kernel(3, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((shapley_kernel(3, 2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_model() {
        let m = FnModel::regression(3, |_| 2.5);
        let bg = Matrix::from_vec(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let e = kernel_shap(&m, &[1.0, 1.0, 1.0], &bg, KernelBudget::Exact, &mut RandomStream::new(0), None)
            .unwrap();
        assert_eq!(e.base_value, 2.5);
        assert!(e.phi.iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn linear_model_closed_form() {
        let w = [2.0, -3.0];
        let m = FnModel::regression(2, move |x| w[0] * x[0] + w[1] * x[1]);
        let b = [0.5, 1.5];
        let bg = Matrix::from_vec(1, 2, b.to_vec()).unwrap();
        let x = [2.0, -1.0];
        let e = kernel_shap(&m, &x, &bg, KernelBudget::Exact, &mut RandomStream::new(0), None).unwrap();
        for j in 0..2 {
            assert!((e.phi[j] - w[j] * (x[j] - b[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_and_background_errors() {
        let m = FnModel::regression(4, |x| x[0]);
        let bg = Matrix::zeros(1, 4);
        let mut rng = RandomStream::new(0);
        assert!(kernel_shap(&m, &[0.0; 4], &bg, KernelBudget::Samples(9), &mut rng, None).is_err());
        assert!(kernel_shap(&m, &[0.0; 4], &Matrix::empty(4), KernelBudget::Exact, &mut rng, None).is_err());
        let wide = FnModel::regression(17, |x| x[0]);
        assert!(matches!(
            kernel_shap(&wide, &[0.0; 17], &Matrix::zeros(1, 17), KernelBudget::Exact, &mut rng, None),
            Err(Error::TooManyFeatures { .. })
        ));
    }

    #[test]
    fn sampled_mode_is_efficient_and_close_on_additive_model() {
        let d = 20;
        let m = FnModel::regression(d, |x| x.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum());
        let bg = Matrix::zeros(1, d);
        let x: Vec<f64> = (0..d).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = kernel_shap(&m, &x, &bg, KernelBudget::Samples(512), &mut RandomStream::new(3), None).unwrap();
        e.check_efficiency(1e-9).unwrap();
        // Additive games are recovered exactly by any full-rank coalition set.
        for j in 0..d {
            assert!((e.phi[j] - (j as f64 + 1.0) * x[j]).abs() < 1e-8, "{j}: {}", e.phi[j]);
        }
    }
}
