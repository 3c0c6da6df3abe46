//! `fallfact` command-line interface.
//!
//! Exit codes: 0 success, 1 computational failure, 2 usage error, 3 I/O or format error.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "fallfact", version, about = "Falling factorial transforms, trend filtering and higher-order KS tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Multiply a vector by H, H^-1, H^T or (H^T)^-1 over a grid.
    Transform(TransformArgs),
    /// Fit trend filtering at one lambda or along a lambda path.
    Trendfilter(TrendfilterArgs),
    /// Higher-order two-sample KS statistic, optionally with a permutation p-value.
    Kstest(KstestArgs),
    /// Run a Monte Carlo experiment from a JSON spec.
    Simulate(SimulateArgs),
    /// Time H transform cycles against dense truncated power cycles.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Op {
    H,
    Hinv,
    Ht,
    Htinv,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long, value_enum)]
    pub op: Op,
    #[arg(long)]
    pub k: usize,
    /// One column of strictly increasing inputs.
    #[arg(long)]
    pub x: PathBuf,
    /// One column of values aligned with `x`.
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrendfilterArgs {
    #[arg(long)]
    pub k: usize,
    /// Two columns `x,y`; rows are sorted by `x`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, conflicts_with = "nlambda", required_unless_present = "nlambda")]
    pub lambda: Option<f64>,
    /// Number of lambdas on a log-spaced path from lambda_max down to 1e-4 lambda_max.
    #[arg(long)]
    pub nlambda: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Map x affinely onto [0, 1] before fitting.
    #[arg(long)]
    pub rescale: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    H,
    G,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Ties {
    Reject,
    Jitter,
}

#[derive(Debug, Args)]
pub struct KstestArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "h")]
    pub method: Method,
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long, requires = "permutations")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the raw scale for k >= 1 instead of mapping the joined sample onto [0, 1].
    #[arg(long)]
    pub no_rescale: bool,
    #[arg(long, value_enum, default_value = "reject")]
    pub ties: Ties,
    #[arg(long, default_value_t = 1e-9)]
    pub jitter_eps: f64,
    #[arg(long, default_value_t = 0)]
    pub jitter_seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Experiment {
    Maxgap,
    Tfrate,
    Roc,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// JSON experiment spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: FALLFACT_THREADS, else all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run ROC experiments with 1000 repetitions instead of the spec value.
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub k: usize,
    /// Largest size; sizes are powers of two from 64 up to this.
    #[arg(long)]
    pub nmax: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Compute(fallfact::Error),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Compute(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Compute(e) => write!(f, "computation failed: {e}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

/// Input files that violate a precondition are format errors; bad parameters are
/// usage errors; everything else failed during computation.
impl From<fallfact::Error> for Failure {
    fn from(e: fallfact::Error) -> Self {
        use fallfact::Error as E;
        match e {
            E::Io(m) => Failure::Io(m),
            E::Empty
            | E::NonFinite(_)
            | E::TiesPresent { .. }
            | E::ZeroGap(..)
            | E::LengthMismatch { .. }
            | E::DimensionMismatch(_)
            | E::TooFewPoints { .. }
            | E::DegenerateRange => Failure::Io(format!("input data: {e}")),
            E::InvalidConfig(_) | E::OrderTooLarge { .. } | E::SizeCap { .. } => Failure::Usage(e.to_string()),
            other => Failure::Compute(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fallfact: {f}");
            ExitCode::from(f.code())
        }
    }
}
