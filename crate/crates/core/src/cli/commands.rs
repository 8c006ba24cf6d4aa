use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::{json, Value};

use super::{Failure, ResultExt, RunConfig};
use crate::data::{load_csv, Dataset, Matrix, TaskKind};
use crate::limase::{limase_explain, limase_explain_batch};
use crate::model::{argmax, BlackBoxModel};
use crate::models::external::attach_external_with_timeout;
use crate::models::{fit_mlp, fit_random_forest, ExternalModel, ForestModel, ForestParams, Model};
use crate::par;
use crate::rng::{derive_seed, RandomStream};
use crate::shapley::{forest_shap, kernel_shap, KernelBudget, ShapExplanation};
use crate::sp::{submodular_pick_with, ExplanationMatrix};
use crate::synth::{synthetic_classification, synthetic_regression};
use crate::viz::{build_force_plot, build_summary_plot, render_svg, Plot, RenderOptions};

// Sub-stream labels so each use of the run seed draws independently.
const STREAM_TRAIN: u64 = 1;
const STREAM_BACKGROUND: u64 = 2;
const STREAM_KERNEL: u64 = 3;
const STREAM_INSTANCES: u64 = 4;

type CmdResult = Result<(), Failure>;

enum LoadedModel {
    Native(Model),
    External(ExternalModel),
}

impl LoadedModel {
    fn as_dyn(&self) -> &dyn BlackBoxModel {
        match self {
            LoadedModel::Native(m) => m,
            LoadedModel::External(m) => m,
        }
    }

    fn as_forest(&self) -> Option<&ForestModel> {
        match self {
            LoadedModel::Native(m) => m.as_forest(),
            LoadedModel::External(_) => None,
        }
    }
}

fn load_data(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let path = cfg.data.as_ref().ok_or_else(|| Failure::Usage(anyhow!("--data is required")))?;
    let target = cfg.target.as_deref().ok_or_else(|| Failure::Usage(anyhow!("--target is required")))?;
    let task: TaskKind = cfg.task.parse().usage()?;
    load_csv(path, target, task)
        .with_context(|| format!("cannot load dataset {}", path.display()))
        .usage()
}

fn train_model(cfg: &RunConfig, data: &Dataset) -> crate::Result<Model> {
    let mut rng = RandomStream::new(derive_seed(cfg.seed, STREAM_TRAIN));
    Ok(match cfg.model.as_str() {
        "tree" => {
            let params = ForestParams {
                n_trees: 1,
                bootstrap: false,
                max_features: Some(data.n_features()),
                ..cfg.forest_params()
            };
            Model::Tree(fit_random_forest(data, &params, &mut rng)?)
        }
        "forest" => Model::Forest(fit_random_forest(data, &cfg.forest_params(), &mut rng)?),
        "mlp" => Model::Mlp(fit_mlp(data, &cfg.mlp_params(), &mut rng)?),
        other => return Err(crate::Error::InvalidParameter(format!("cannot train model `{other}`"))),
    })
}

fn read_model_file(path: &Path) -> anyhow::Result<Model> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))?;
    // Accept both the model.json written by `train` and a bare model.
    let inner = match value.get("model") {
        Some(m) if value.get("kind").is_none() => m.clone(),
        _ => value,
    };
    serde_json::from_value(inner).with_context(|| format!("{} does not hold a model", path.display()))
}

fn load_model(cfg: &RunConfig, data: &Dataset) -> Result<LoadedModel, Failure> {
    if let Some(path) = &cfg.model_file {
        let m = read_model_file(path).usage()?;
        if m.n_features() != data.n_features() {
            return Err(Failure::Usage(anyhow!(
                "model expects {} features, dataset has {}",
                m.n_features(),
                data.n_features()
            )));
        }
        if m.task() != data.task {
            return Err(Failure::Usage(anyhow!(
                "model task {} does not match dataset task {}",
                m.task().name(),
                data.task.name()
            )));
        }
        return Ok(LoadedModel::Native(m));
    }
    if let Some(cmd) = cfg.external_command() {
        let timeout = Duration::from_secs(cfg.timeout_secs);
        let m = attach_external_with_timeout(cmd, data.n_features(), data.task, timeout)
            .with_context(|| format!("cannot attach external model `{cmd}`"))
            .runtime()?;
        return Ok(LoadedModel::External(m));
    }
    train_model(cfg, data).context("training failed").runtime().map(LoadedModel::Native)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output directory {}", cfg.out.display()))
        .runtime()?;
    Ok(&cfg.out)
}

fn write_json(path: PathBuf, value: &Value) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).runtime()?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display())).runtime()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_svg(path: PathBuf, plot: Plot<'_>, cfg: &RunConfig) -> CmdResult {
    let opts = RenderOptions { max_summary_features: cfg.max_plot_features };
    render_svg(plot, &path, &opts).runtime()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn with_config<T: Serialize>(cfg: &RunConfig, key: &str, payload: &T) -> Result<Value, Failure> {
    let mut v = json!({ "config": cfg });
    v[key] = serde_json::to_value(payload).runtime()?;
    Ok(v)
}

fn strip_timing(cfg: &RunConfig, e: &mut ShapExplanation) {
    if !cfg.timing {
        e.elapsed_ms = None;
    }
}

fn background_rows(cfg: &RunConfig, data: &Dataset) -> Matrix {
    let idx = RandomStream::new(derive_seed(cfg.seed, STREAM_BACKGROUND)).sample_indices(data.n_samples(), cfg.background);
    data.rows.select_rows(&idx)
}

fn instance_indices(cfg: &RunConfig, data: &Dataset) -> Result<Vec<usize>, Failure> {
    if cfg.count > data.n_samples() {
        return Err(Failure::Usage(anyhow!(
            "count {} exceeds the {} rows in the dataset",
            cfg.count,
            data.n_samples()
        )));
    }
    Ok(RandomStream::new(derive_seed(cfg.seed, STREAM_INSTANCES)).sample_indices(data.n_samples(), cfg.count))
}

fn require_forest<'a>(cfg: &RunConfig, model: &'a LoadedModel) -> Result<&'a ForestModel, Failure> {
    model.as_forest().ok_or_else(|| {
        Failure::Usage(anyhow!("explainer treeshap needs a tree or forest model, not `{}`", cfg.model))
    })
}

fn kernel_for_rows(
    cfg: &RunConfig,
    model: &dyn BlackBoxModel,
    rows: &Matrix,
    background: &Matrix,
) -> Vec<crate::Result<ShapExplanation>> {
    let base = derive_seed(cfg.seed, STREAM_KERNEL);
    par::map_range(rows.nrows(), |i| {
        let mut rng = RandomStream::new(derive_seed(base, i as u64));
        kernel_shap(model, rows.row(i), background, KernelBudget::Samples(cfg.kernel_samples), &mut rng, cfg.class)
    })
}

/// Explanations of the given dataset rows with the configured explainer.
fn explain_rows(
    cfg: &RunConfig,
    model: &LoadedModel,
    data: &Dataset,
    idx: &[usize],
) -> Result<(Vec<ShapExplanation>, Option<Vec<f64>>), Failure> {
    let rows = data.rows.select_rows(idx);
    let names = data.feature_names();
    let (results, fidelity): (Vec<crate::Result<ShapExplanation>>, Option<Vec<f64>>) = match cfg.explainer.as_str() {
        "limase" => {
            let out = limase_explain_batch(model.as_dyn(), &rows, &data.features, &cfg.limase_config());
            let fid = out.iter().map(|r| r.as_ref().map_or(f64::NAN, |r| r.fidelity_r2)).collect();
            (out.into_iter().map(|r| r.map(|r| r.explanation)).collect(), Some(fid))
        }
        "treeshap" => {
            let forest = require_forest(cfg, model)?;
            let out = par::map_range(rows.nrows(), |i| {
                forest_shap(forest, rows.row(i), cfg.class).map(|e| e.with_names(&names))
            });
            (out, None)
        }
        _ => {
            let bg = background_rows(cfg, data);
            let out = kernel_for_rows(cfg, model.as_dyn(), &rows, &bg);
            (out.into_iter().map(|r| r.map(|e| e.with_names(&names))).collect(), None)
        }
    };
    let mut explanations = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        let mut e = r.with_context(|| format!("explaining row {}", idx[k])).runtime()?;
        strip_timing(cfg, &mut e);
        explanations.push(e);
    }
    Ok((explanations, fidelity))
}

pub(super) fn inspect(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    let text = serde_json::to_string_pretty(&data.summary()).runtime()?;
    println!("{text}");
    Ok(())
}

fn training_metric(model: &Model, data: &Dataset) -> crate::Result<(&'static str, f64)> {
    let out = model.predict(&data.rows)?;
    if matches!(model.task(), crate::data::Task::Classification { .. }) {
        let hits = out
            .values
            .iter_rows()
            .zip(&data.target)
            .filter(|(p, &y)| argmax(p) as f64 == y)
            .count();
        Ok(("accuracy", hits as f64 / data.n_samples() as f64))
    } else {
        let mean = data.target.iter().sum::<f64>() / data.n_samples() as f64;
        let ss_tot: f64 = data.target.iter().map(|y| (y - mean).powi(2)).sum();
        let ss_res: f64 = out.values.as_slice().iter().zip(&data.target).map(|(p, y)| (p - y).powi(2)).sum();
        Ok(("r2", if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 }))
    }
}

pub(super) fn train(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    if cfg.external_command().is_some() {
        return Err(Failure::Usage(anyhow!("external models cannot be trained")));
    }
    let model = train_model(cfg, &data).context("training failed").runtime()?;
    let (metric, value) = training_metric(&model, &data).runtime()?;
    println!("trained {} on {} rows: training {metric} = {value:.4}", model.kind(), data.n_samples());
    let mut doc = with_config(cfg, "model", &model)?;
    doc["training"] = json!({ "metric": metric, "value": value });
    write_json(out_dir(cfg)?.join("model.json"), &doc)
}

pub(super) fn explain(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    if cfg.instance >= data.n_samples() {
        return Err(Failure::Usage(anyhow!(
            "instance {} out of range for {} rows",
            cfg.instance,
            data.n_samples()
        )));
    }
    let model = load_model(cfg, &data)?;
    let x = data.rows.row(cfg.instance);
    let (doc, explanation) = match cfg.explainer.as_str() {
        "limase" => {
            let mut r = limase_explain(model.as_dyn(), x, &data.features, &cfg.limase_config()).runtime()?;
            strip_timing(cfg, &mut r.explanation);
            (with_config(cfg, "explanation", &r)?, r.explanation)
        }
        "treeshap" => {
            let forest = require_forest(cfg, &model)?;
            let mut e = forest_shap(forest, x, cfg.class).runtime()?.with_names(&data.feature_names());
            strip_timing(cfg, &mut e);
            (with_config(cfg, "explanation", &e)?, e)
        }
        _ => {
            let bg = background_rows(cfg, &data);
            let mut rng = RandomStream::new(derive_seed(derive_seed(cfg.seed, STREAM_KERNEL), 0));
            let budget = KernelBudget::Samples(cfg.kernel_samples);
            let mut e = kernel_shap(model.as_dyn(), x, &bg, budget, &mut rng, cfg.class)
                .runtime()?
                .with_names(&data.feature_names());
            strip_timing(cfg, &mut e);
            (with_config(cfg, "explanation", &e)?, e)
        }
    };
    let mut doc = doc;
    doc["instance"] = json!(cfg.instance);
    let force = build_force_plot(&explanation, &data.features).runtime()?;
    let dir = out_dir(cfg)?;
    write_json(dir.join("explanation.json"), &doc)?;
    write_svg(dir.join("force.svg"), Plot::Force(&force), cfg)
}

fn matrix_doc(
    cfg: &RunConfig,
    data: &Dataset,
    idx: &[usize],
    explanations: &[ShapExplanation],
    fidelity: Option<&[f64]>,
) -> Result<(Value, ExplanationMatrix), Failure> {
    let rows: Vec<Vec<f64>> = explanations.iter().map(|e| e.phi.clone()).collect();
    let values = Matrix::from_rows(&rows).runtime()?;
    let matrix = ExplanationMatrix::new(values, idx.to_vec()).runtime()?;
    let mut doc = json!({
        "config": cfg,
        "explainer": cfg.explainer,
        "instances": idx,
        "feature_names": data.feature_names(),
        "base_values": explanations.iter().map(|e| e.base_value).collect::<Vec<_>>(),
        "fx": explanations.iter().map(|e| e.fx).collect::<Vec<_>>(),
        "values": rows,
    });
    if let Some(f) = fidelity {
        doc["fidelity_r2"] = json!(f);
    }
    Ok((doc, matrix))
}

pub(super) fn global(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    let idx = instance_indices(cfg, &data)?;
    let model = load_model(cfg, &data)?;
    let start = Instant::now();
    let (explanations, fidelity) = explain_rows(cfg, &model, &data, &idx)?;
    let elapsed = start.elapsed().as_secs_f64();
    let (mut doc, matrix) = matrix_doc(cfg, &data, &idx, &explanations, fidelity.as_deref())?;
    if cfg.timing {
        doc["elapsed_s"] = json!(elapsed);
    }
    println!("explained {} instances with {} in {elapsed:.3} s", idx.len(), cfg.explainer);
    let summary = build_summary_plot(&matrix, &data.rows.select_rows(&idx), &data.features).runtime()?;
    let dir = out_dir(cfg)?;
    write_json(dir.join("matrix.json"), &doc)?;
    write_svg(dir.join("summary.svg"), Plot::Summary(&summary), cfg)
}

pub(super) fn sp(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    let idx = instance_indices(cfg, &data)?;
    let model = load_model(cfg, &data)?;
    let (explanations, _) = explain_rows(cfg, &model, &data, &idx)?;
    let (_, matrix) = matrix_doc(cfg, &data, &idx, &explanations, None)?;
    let result = submodular_pick_with(&matrix, cfg.budget, cfg.sp_mode).runtime()?;
    println!(
        "picked instances {:?}, coverage {:.4}",
        result.instances,
        result.coverage_history.last().copied().unwrap_or(0.0)
    );
    let mut doc = serde_json::to_value(&result).runtime()?;
    doc["config"] = serde_json::to_value(cfg).runtime()?;
    let picked = ExplanationMatrix::new(matrix.values.select_rows(&result.selected), result.instances.clone()).runtime()?;
    let summary =
        build_summary_plot(&picked, &data.rows.select_rows(&result.instances), &data.features).runtime()?;
    let dir = out_dir(cfg)?;
    write_json(dir.join("sp.json"), &doc)?;
    write_svg(dir.join("summary.svg"), Plot::Summary(&summary), cfg)
}

#[derive(Debug, Serialize)]
struct Timing {
    instances: usize,
    limase_s: f64,
    kernelshap_s: f64,
    speedup: f64,
}

impl Timing {
    fn new(instances: usize, limase_s: f64, kernelshap_s: f64) -> Self {
        Self { instances, limase_s, kernelshap_s, speedup: kernelshap_s / limase_s }
    }
}

pub(super) fn bench(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    if data.n_samples() < 100 {
        return Err(Failure::Usage(anyhow!("bench needs at least 100 rows, got {}", data.n_samples())));
    }
    if cfg.model_file.is_none() && matches!(cfg.model.as_str(), "tree" | "forest") {
        return Err(Failure::Usage(anyhow!("bench compares black-box explainers; use --model mlp or external:<cmd>")));
    }
    let idx = instance_indices(cfg, &data)?;
    let model = load_model(cfg, &data)?;
    let m = model.as_dyn();
    let bg = background_rows(cfg, &data);
    let rows = data.rows.select_rows(&idx);
    let single = data.rows.select_rows(&[cfg.instance.min(data.n_samples() - 1)]);
    let lcfg = cfg.limase_config();

    let time = |f: &dyn Fn() -> anyhow::Result<()>| -> Result<f64, Failure> {
        let t = Instant::now();
        f().runtime()?;
        Ok(t.elapsed().as_secs_f64())
    };
    let collect_limase = |r: &Matrix| -> anyhow::Result<()> {
        for res in limase_explain_batch(m, r, &data.features, &lcfg) {
            res?;
        }
        Ok(())
    };
    let collect_kernel = |r: &Matrix| -> anyhow::Result<()> {
        for res in kernel_for_rows(cfg, m, r, &bg) {
            res?;
        }
        Ok(())
    };
    let one = Timing::new(1, time(&|| collect_limase(&single))?, time(&|| collect_kernel(&single))?);
    println!("1 instance: limase {:.3} s, kernelshap {:.3} s, speedup {:.1}x", one.limase_s, one.kernelshap_s, one.speedup);
    let many = Timing::new(idx.len(), time(&|| collect_limase(&rows))?, time(&|| collect_kernel(&rows))?);
    println!(
        "{} instances: limase {:.3} s, kernelshap {:.3} s, speedup {:.1}x",
        many.instances, many.limase_s, many.kernelshap_s, many.speedup
    );
    let doc = json!({
        "config": cfg,
        "kernel_samples": cfg.kernel_samples,
        "background_rows": bg.nrows(),
        "threads": par::current_num_threads(),
        "single": one,
        "batch": many,
    });
    write_json(out_dir(cfg)?.join("bench.json"), &doc)
}

pub(super) fn synth(cfg: &RunConfig, rows: usize, features: usize, classes: usize) -> CmdResult {
    let data = match cfg.task.as_str() {
        "classification" => synthetic_classification(rows, features, classes, cfg.seed),
        _ => synthetic_regression(rows, features, cfg.seed),
    }
    .usage()?;
    let path = out_dir(cfg)?.join("data.csv");
    data.write_csv(&path).runtime()?;
    println!("wrote {} ({} rows, target `{}`)", path.display(), rows, data.target_name);
    Ok(())
}

pub(super) fn serve(cfg: &RunConfig) -> CmdResult {
    let Some(path) = &cfg.model_file else {
        return Err(Failure::Usage(anyhow!("--model-file is required")));
    };
    let model = read_model_file(path).usage()?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    crate::models::serve_model(&model, stdin.lock(), &mut stdout).runtime()?;
    stdout.flush().runtime()?;
    Ok(())
}

