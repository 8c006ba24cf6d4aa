//! The `limase` command-line tool.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage, configuration
//! or input-data problems.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::limase::SampleCenter;

#[derive(Debug, Parser)]
#[command(name = "limase", version, about = "Shapley explanations from local surrogate trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print dataset statistics.
    Inspect,
    /// Fit a model and write model.json.
    Train,
    /// Explain one instance: explanation.json and force.svg.
    Explain,
    /// Explain `--count` random instances: matrix.json and summary.svg.
    Global,
    /// Submodular pick over `--count` explanations: sp.json and summary.svg.
    Sp,
    /// Time the surrogate explainer against KernelSHAP: bench.json.
    Bench,
    /// Write a synthetic dataset to <out>/data.csv.
    Synth(SynthArgs),
    /// Answer prediction requests for a saved model on stdin/stdout.
    #[command(hide = true)]
    ServeModel,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    features: usize,
    /// Number of classes for classification data.
    #[arg(long, default_value_t = 3)]
    classes: usize,
}

#[derive(Debug, Default, Args)]
struct Flags {
    /// key = value settings file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    target: Option<String>,
    /// regression or classification.
    #[arg(long, global = true)]
    task: Option<String>,
    /// tree, forest, mlp or external:<command>.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Previously trained model.json.
    #[arg(long, global = true)]
    model_file: Option<PathBuf>,
    /// limase, treeshap or kernelshap.
    #[arg(long, global = true)]
    explainer: Option<String>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Perturbation centre: data or instance.
    #[arg(long, global = true, value_parser = parse_center)]
    center: Option<SampleCenter>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    class: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    count: Option<usize>,
    #[arg(long, global = true)]
    instance: Option<usize>,
    /// Background rows for KernelSHAP.
    #[arg(long, global = true)]
    background: Option<usize>,
    /// Coalition budget for KernelSHAP.
    #[arg(long, global = true)]
    kernel_samples: Option<usize>,
    /// Use the literal signed importance and coverage in `sp`.
    #[arg(long, global = true)]
    literal_sp: bool,
    #[arg(long, global = true)]
    max_plot_features: Option<usize>,
    /// Include wall-clock timings in explanation outputs.
    #[arg(long, global = true)]
    timing: bool,
}

impl Flags {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone().into(); } )* };
        }
        set!(data, target, model_file, class, threads, sigma);
        set!(task, model, explainer, n_samples, seed, budget, out, count, instance, background);
        set!(kernel_samples, max_plot_features, center);
        if self.literal_sp {
            c.sp_mode = crate::sp::SpMode::Literal;
        }
        if self.timing {
            c.timing = true;
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_center(s: &str) -> Result<SampleCenter, String> {
    match s {
        "data" => Ok(SampleCenter::Data),
        "instance" => Ok(SampleCenter::Instance),
        other => Err(format!("unknown center `{other}` (expected data or instance)")),
    }
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let cfg = cli.flags.resolve().usage()?;
    crate::par::configure_threads(cfg.threads);
    match cli.command {
        Command::Inspect => commands::inspect(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Explain => commands::explain(&cfg),
        Command::Global => commands::global(&cfg),
        Command::Sp => commands::sp(&cfg),
        Command::Bench => commands::bench(&cfg),
        Command::Synth(a) => commands::synth(&cfg, a.rows, a.features, a.classes),
        Command::ServeModel => commands::serve(&cfg),
    }
}
