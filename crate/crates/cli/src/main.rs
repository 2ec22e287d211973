//! `treeagg` command line: fit, cv, simulate, evaluate, aggregate, bench,
//! export-dot.
//!
//! Exit codes: 0 on success, 2 for input problems (files, formats, flags),
//! 3 for numerical failures inside the solver.

mod commands;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Serialize)]
#[command(name = "treeagg", version, about = "Tree-guided selection and logic aggregation of rare binary features")]
struct Cli {
    /// Worker threads for folds/grid/replicates (default: all cores;
    /// TREEAGG_THREADS overrides).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Fit one model at a fixed (alpha, lambda) and extract its pattern.
    Fit(FitArgs),
    /// Cross-validate over the (alpha, lambda) grid, then refit at the best point.
    Cv(CvArgs),
    /// Generate a synthetic dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Score a fitted model on a dataset.
    Evaluate(EvaluateArgs),
    /// Reduce a dataset to one or-column per pattern block.
    Aggregate(AggregateArgs),
    /// Run a repeated simulation study and aggregate the metrics.
    Bench(BenchArgs),
    /// Render a tree (optionally with a pattern) as Graphviz DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Args, Serialize, Clone)]
struct DataArgs {
    /// Tree file: nested JSON or TSV edge list.
    #[arg(long)]
    tree: PathBuf,
    /// CSV data file with a header row and 0/1 feature columns.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    response: String,
}

#[derive(Args, Serialize, Clone)]
struct SolverArgs {
    /// Loss: squared | logistic.
    #[arg(long, default_value = "squared")]
    loss: String,
    /// Smoothness parameter of the penalty approximation.
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Case weight for positives (logistic).
    #[arg(long, default_value_t = 1.0)]
    w1: f64,
    /// Case weight for negatives (logistic).
    #[arg(long, default_value_t = 1.0)]
    w0: f64,
    /// Refuse expansion when one node would generate more subsets than this.
    #[arg(long, default_value_t = 4095)]
    subset_cap: usize,
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    io: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Penalty level; overrides --lambda-frac.
    #[arg(long)]
    lambda: Option<f64>,
    /// Penalty level as a fraction of lambda*.
    #[arg(long, default_value_t = 0.1)]
    lambda_frac: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Output directory (TREEAGG_OUT_DIR overrides the default ".").
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CvArgs {
    #[command(flatten)]
    io: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Comma-separated alpha grid.
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    alphas: String,
    #[arg(long, default_value_t = 50)]
    n_lambda: usize,
    /// Smallest lambda as a fraction of lambda*.
    #[arg(long, default_value_t = 0.01)]
    lambda_min_frac: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit every grid point from a cold start instead of walking the path.
    #[arg(long, default_value_t = false)]
    no_warm_start: bool,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Built-in hierarchy id (1, 2, or 3).
    #[arg(long, conflicts_with = "tree")]
    tree_id: Option<u8>,
    /// External tree file instead of a built-in one.
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    prevalence: f64,
    /// regression | classification
    #[arg(long)]
    mode: String,
    /// Signal-to-noise ratio (regression).
    #[arg(long, default_value_t = 2.0)]
    snr: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 0.0)]
    c: f64,
    #[arg(long, default_value_t = 0.0)]
    d: f64,
    /// Keep all cases and this many controls per case.
    #[arg(long)]
    case_control_ratio: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replicate index; uses seed + replicate.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// model.json produced by fit/cv.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    /// Operating points, comma separated: spec90, spec95, top5, top10.
    #[arg(long, default_value = "spec90,spec95")]
    operating: String,
    /// Population positive rate for the case-control PPV adjustment.
    #[arg(long)]
    base_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AggregateArgs {
    /// pattern.json produced by fit/cv.
    #[arg(long)]
    pattern: PathBuf,
    #[command(flatten)]
    io: DataArgs,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    /// regression-case{1,2,3} or classification-case{1,2,3,4}.
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 20240901)]
    seed: u64,
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    alphas: String,
    #[arg(long, default_value_t = 50)]
    n_lambda: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda_min_frac: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Override the task's training size.
    #[arg(long)]
    train_n: Option<usize>,
    /// Override the task's test size.
    #[arg(long)]
    test_n: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ExportDotArgs {
    #[arg(long)]
    tree: PathBuf,
    /// Optional pattern.json to overlay.
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = resolve_threads(cli.threads) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Fit(args) => commands::fit(args),
        Command::Cv(args) => commands::cv(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Aggregate(args) => commands::aggregate(args),
        Command::Bench(args) => commands::bench(args),
        Command::ExportDot(args) => commands::export_dot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("treeagg: {err}");
            match err {
                treeagg::Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var("TREEAGG_THREADS").ok().and_then(|v| v.parse().ok()))
}
