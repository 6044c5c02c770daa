//! `cid` — train a tabular classifier, explain its predictions through
//! counterfactual importance distributions, and evaluate those
//! explanations.
//!
//! Every subcommand is deterministic under a fixed `--seed` (the one
//! exception is `ablate`'s wall-clock column). Primary results go to
//! `--out` or standard output; diagnostics go to standard error, gated by
//! the `CID_LOG` environment variable.
//!
//! Exit codes: 0 success, 1 data/model error, 2 usage error,
//! 3 counterfactual budget exhausted.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use cid_core::counterfactual::CfMethod;
use cid_core::density::KernelKind;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "cid",
    version,
    about = "Counterfactual importance distributions for tabular classifiers"
)]
pub struct Cli {
    /// Master seed: drives the train/test split and all sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// CSV dataset with a binary label column.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,

    /// Name of the label column in --data.
    #[arg(long, global = true, default_value = "label")]
    pub label: String,

    /// Classifier: path to a weight JSON, or `external:<command>` to talk
    /// to a subprocess over the line protocol.
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// Write the primary result here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Primary output format.
    #[arg(long, global = true, value_parser = ["json", "csv"], default_value = "json")]
    pub format: String,

    /// Fraction of rows held out as the test split.
    #[arg(long, global = true, default_value_t = 0.25)]
    pub test_fraction: f64,

    /// Worker threads for per-instance fan-out.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the built-in logistic classifier and write its weights.
    Train(TrainArgs),
    /// Score one instance's features by counterfactual separation.
    Explain(ExplainArgs),
    /// Measure explanation faithfulness on test instances.
    Evaluate(EvaluateArgs),
    /// Compare the top-k feature sets of two explanation sources.
    Agree(AgreeArgs),
    /// Sweep kernel × generator settings and cross-compare them.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Full-batch gradient-descent epochs.
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,

    /// Learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,

    /// L2 penalty on the weights (the bias is exempt).
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
}

/// Knobs shared by every subcommand that runs the explanation pipeline.
#[derive(Args, Debug, Clone)]
pub struct PipelineKnobs {
    /// Counterfactuals per set (positives and negatives each get m).
    #[arg(long, default_value_t = 50)]
    pub m: usize,

    /// Independent counterfactual redraws averaged into the scores.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,

    /// Density grid resolution.
    #[arg(long, default_value_t = 512)]
    pub grid_points: usize,

    /// Grid padding in multiples of the larger bandwidth.
    #[arg(long, default_value_t = 3.0)]
    pub grid_pad: f64,

    /// Dissimilarity order; scores land in [k-1, k].
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,

    /// Features changed per random candidate (default: about d/3).
    #[arg(long)]
    pub sparsity: Option<usize>,

    /// Candidate budget for the random generator (default: 200·m).
    #[arg(long)]
    pub max_attempts: Option<usize>,

    /// Comma-separated feature names or indices allowed to change.
    #[arg(long)]
    pub features_to_vary: Option<String>,

    /// Genetic generator: population size (default 4·m).
    #[arg(long)]
    pub population: Option<usize>,

    /// Genetic generator: evolution rounds.
    #[arg(long)]
    pub generations: Option<usize>,

    /// Genetic generator: weight of the proximity term in the fitness.
    #[arg(long)]
    pub lambda: Option<f64>,
}

fn parse_kernel(s: &str) -> Result<KernelKind, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<CfMethod, String> {
    s.parse()
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Test-split row index, or an inline JSON vector like "[1.0, -0.3]".
    #[arg(long)]
    pub instance: String,

    /// Density kernel.
    #[arg(long, value_parser = parse_kernel, default_value = "gaussian")]
    pub kernel: KernelKind,

    /// Counterfactual generator.
    #[arg(long, value_parser = parse_method, default_value = "random")]
    pub cf_method: CfMethod,

    #[command(flatten)]
    pub knobs: PipelineKnobs,

    /// Also print the top-k ranked feature names.
    #[arg(long)]
    pub k_top: Option<usize>,

    /// Write the generated counterfactual sets (JSON) here.
    #[arg(long)]
    pub dump_cfs: Option<PathBuf>,

    /// Write every per-feature density pair (JSON) here.
    #[arg(long)]
    pub dump_densities: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// `cid` to explain in-run, or a path to an explanation CSV.
    #[arg(long, default_value = "cid")]
    pub explanations: String,

    /// Which faithfulness metric(s) to compute.
    #[arg(long, value_parser = ["comp", "suff", "both"], default_value = "both")]
    pub metric: String,

    /// Test rows to use: `a..b`, a single index, or all when absent.
    #[arg(long)]
    pub instances: Option<String>,

    /// Write the per-instance occlusion curves (CSV) here.
    #[arg(long)]
    pub dump_trajectory: Option<PathBuf>,

    /// Density kernel for in-run explanations.
    #[arg(long, value_parser = parse_kernel, default_value = "gaussian")]
    pub kernel: KernelKind,

    /// Counterfactual generator for in-run explanations.
    #[arg(long, value_parser = parse_method, default_value = "random")]
    pub cf_method: CfMethod,

    #[command(flatten)]
    pub knobs: PipelineKnobs,
}

#[derive(Args, Debug)]
pub struct AgreeArgs {
    /// First source: `cid` or an explanation CSV path.
    #[arg(long)]
    pub a: String,

    /// Second source: `cid` or an explanation CSV path.
    #[arg(long)]
    pub b: String,

    /// Size of the compared top-feature sets.
    #[arg(long, default_value_t = 4)]
    pub k_top: usize,

    /// Test rows to use when a source is `cid`.
    #[arg(long)]
    pub instances: Option<String>,

    /// Density kernel for in-run explanations.
    #[arg(long, value_parser = parse_kernel, default_value = "gaussian")]
    pub kernel: KernelKind,

    /// Counterfactual generator for in-run explanations.
    #[arg(long, value_parser = parse_method, default_value = "random")]
    pub cf_method: CfMethod,

    #[command(flatten)]
    pub knobs: PipelineKnobs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Comma-separated kernels to sweep.
    #[arg(long, default_value = "gaussian,epanechnikov,exponential")]
    pub kernels: String,

    /// Comma-separated counterfactual generators to sweep.
    #[arg(long, default_value = "random,genetic")]
    pub cf_methods: String,

    /// Top-k size for the pairwise agreement matrix.
    #[arg(long, default_value_t = 4)]
    pub k_top: usize,

    /// Test rows to use: `a..b`, a single index, or all when absent.
    #[arg(long)]
    pub instances: Option<String>,

    #[command(flatten)]
    pub knobs: PipelineKnobs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CID_LOG", "error"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
