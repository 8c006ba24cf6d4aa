use std::path::Path;
use std::process::Command;

use serde_json::Value;

struct Run {
    code: i32,
    stderr: String,
}

fn limase(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_limase")).args(args).output().unwrap();
    Run { code: out.status.code().unwrap_or(-1), stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

fn ok(args: &[&str]) {
    let r = limase(args);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic dataset in `dir/data.csv`.
fn synth(dir: &Path, task: &str, rows: &str, features: &str) {
    ok(&["synth", "--task", task, "--rows", rows, "--features", features, "--seed", "5", "--out", s(dir)]);
}

#[test]
fn invalid_target_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "regression", "50", "3");
    let data = dir.path().join("data.csv");
    let r = limase(&["train", "--data", s(&data), "--target", "price"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("price"), "{}", r.stderr);
    assert_eq!(limase(&["explain", "--bogus"]).code, 2);
    assert_eq!(limase(&["explain", "--data", s(&data), "--target", "y", "--model", "svm"]).code, 2);
    let r = limase(&["explain", "--data", s(&data), "--target", "y", "--instance", "50", "--out", s(dir.path())]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("instance 50"));
}

#[test]
fn forest_training_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "classification", "300", "4");
    let data = dir.path().join("data.csv");
    ok(&["train", "--data", s(&data), "--target", "label", "--task", "classification", "--out", s(dir.path())]);
    let model = json(&dir.path().join("model.json"));
    assert_eq!(model["training"]["metric"], "accuracy");
    assert!(model["training"]["value"].as_f64().unwrap() >= 0.9);
    assert_eq!(model["config"]["target"], "label");
    assert_eq!(model["model"]["kind"], "forest");
}

#[test]
fn tree_fits_representable_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("step.csv");
    let mut text = String::from("a,b,y\n");
    for i in 0..200 {
        let a = (i % 20) as f64 / 10.0 - 1.0;
        let b = (i / 20) as f64;
        let y = if a <= 0.25 { 1.0 } else { 3.0 } + if b <= 4.5 { 0.0 } else { 10.0 };
        text.push_str(&format!("{a},{b},{y}\n"));
    }
    std::fs::write(&data, text).unwrap();
    ok(&["train", "--model", "tree", "--data", s(&data), "--target", "y", "--out", s(dir.path())]);
    let model = json(&dir.path().join("model.json"));
    assert_eq!(model["training"]["metric"], "r2");
    assert!(model["training"]["value"].as_f64().unwrap() >= 0.99);
}

#[test]
fn explain_dispatches_each_explainer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "regression", "120", "4");
    let data = d.join("data.csv");
    ok(&["train", "--data", s(&data), "--target", "y", "--out", s(d), "--model", "forest"]);
    let model = d.join("model.json");
    let base = ["--data", s(&data), "--target", "y", "--model-file", s(&model), "--out", s(d), "--instance", "7"];

    ok(&[&["explain", "--explainer", "treeshap"][..], &base].concat());
    let e = json(&d.join("explanation.json"));
    assert_eq!(e["explanation"]["explainer"], "treeshap");
    assert_eq!(e["instance"], 7);
    assert!(d.join("force.svg").exists());

    ok(&[&["explain", "--explainer", "limase", "--sigma", "5", "--n-samples", "1000"][..], &base].concat());
    let e = json(&d.join("explanation.json"));
    assert_eq!(e["explanation"]["explainer"], "limase");
    assert_eq!(e["explanation"]["sigma"], 5.0);
    assert_eq!(e["explanation"]["n_samples"], 1000);
    assert_eq!(e["config"]["sigma"], 5.0);
    assert!(e["explanation"]["fidelity_r2"].as_f64().unwrap() <= 1.0);
    assert!(e["explanation"]["elapsed_ms"].is_null());

    let external = format!("external:'{}' serve-model --model-file '{}'", env!("CARGO_BIN_EXE_limase"), s(&model));
    ok(&[
        "explain", "--explainer", "kernelshap", "--model", &external, "--timing", "--kernel-samples", "64",
        "--background", "20", "--data", s(&data), "--target", "y", "--out", s(d),
    ]);
    let e = json(&d.join("explanation.json"));
    assert_eq!(e["explanation"]["explainer"], "kernelshap");
    assert!(e["explanation"]["elapsed_ms"].as_f64().unwrap() >= 0.0);
    assert_eq!(e["config"]["model"], external);
}

#[test]
fn treeshap_requires_a_tree_model() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "regression", "60", "3");
    let data = dir.path().join("data.csv");
    let r = limase(&[
        "explain", "--explainer", "treeshap", "--model", "mlp", "--data", s(&data), "--target", "y", "--out",
        s(dir.path()),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("treeshap"));
}

#[test]
fn global_and_sp_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "regression", "80", "5");
    let data = d.join("data.csv");
    let common = ["--data", s(&data), "--target", "y", "--out", s(d), "--n-samples", "200"];

    ok(&[&["global", "--count", "1"][..], &common].concat());
    let m = json(&d.join("matrix.json"));
    assert_eq!(m["values"].as_array().unwrap().len(), 1);
    assert!(std::fs::read_to_string(d.join("summary.svg")).unwrap().starts_with("<svg"));

    ok(&[&["sp", "--count", "6", "--budget", "1"][..], &common].concat());
    let r = json(&d.join("sp.json"));
    assert_eq!(r["selected"].as_array().unwrap().len(), 1);
    assert_eq!(r["budget"], 1);

    ok(&[&["sp", "--count", "6", "--budget", "9"][..], &common].concat());
    let r = json(&d.join("sp.json"));
    let mut sel: Vec<u64> = r["selected"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    sel.sort();
    assert_eq!(sel, (0..6).collect::<Vec<u64>>());
    let hist: Vec<f64> = r["coverage_history"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(hist.windows(2).all(|w| w[0] <= w[1]));

    let r = limase(&[&["global", "--count", "81"][..], &common].concat());
    assert_eq!(r.code, 2);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "regression", "60", "3");
    let data = d.join("data.csv");
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "seed = 9\nn_samples = 150\nexplainer = \"limase\"\ntarget = \"y\"\n").unwrap();
    ok(&["explain", "--config", s(&cfg), "--data", s(&data), "--seed", "3", "--out", s(d)]);
    let e = json(&d.join("explanation.json"));
    assert_eq!(e["config"]["seed"], 3);
    assert_eq!(e["config"]["n_samples"], 150);
    assert_eq!(e["explanation"]["n_samples"], 150);
    std::fs::write(&cfg, "n_samples = \"many\"\n").unwrap();
    assert_eq!(limase(&["explain", "--config", s(&cfg)]).code, 2);
}
