//! `asdn`: experiment runner for sparse-representation classification.
//!
//! Exit status is 0 on success, 2 for a malformed command line, 3 when the
//! configuration fails validation and 1 for any failure while running. On
//! failure a single JSON line goes to stderr.

mod commands;
mod config;
mod grid;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Config(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }

    fn report(&self) {
        let (kind, message) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Config(m) => ("config", m),
            Failure::Runtime(m) => ("runtime", m),
        };
        let line = serde_json::json!({
            "status": "error",
            "code": self.code(),
            "kind": kind,
            "message": message,
        });
        eprintln!("{line}");
    }
}

impl From<asdn_core::Error> for Failure {
    fn from(e: asdn_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "asdn", version, about = "Sparse-representation classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a CSV file or validate a bundle, writing a bundle to --out.
    Ingest(IngestArgs),
    /// Draw a per-class dictionary/train/test split.
    Split(DataArgs),
    /// Train the unrolled network on the training pixels of a split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Classify the test pixels of a split and score them.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Sweep one solver parameter over a grid, averaging over redrawn splits.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Compare analytic network gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Summarize the report.json and sweep.json found in a run directory.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
pub struct IngestArgs {
    /// CSV file (bands then label per row) or bundle directory.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Image width for CSV rows.
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Bundle directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub dict_frac: Option<f64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Split seed (first seed of a sweep).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep raw spectra instead of scaling pixels to unit norm.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Args, Debug, Default)]
pub struct SolverArgs {
    /// omp, sp, romp, gomp, samp, fista, admm_fixed or asdn.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "S")]
    pub s: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// SAMP step size.
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Untrained network depth for the asdn solver.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Trained network parameters (params.json) for the asdn solver.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub train_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    /// K, S, step, lambda or rho.
    #[arg(long)]
    pub param: Option<String>,
    /// `a:b`, `a:b:s` or a comma list of either.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub stages: Option<usize>,
    /// First instance seed; later seeds are tried until the point is kink-free.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let failure = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return ExitCode::SUCCESS;
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    Failure::Usage("missing subcommand; try --help".into())
                }
                ErrorKind::InvalidValue | ErrorKind::ValueValidation => {
                    Failure::Config(first_line(&e.to_string()))
                }
                _ => Failure::Usage(first_line(&e.to_string())),
            };
            failure.report();
            return ExitCode::from(failure.code());
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code())
        }
    }
}

fn first_line(text: &str) -> String {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("invalid command line")
        .trim_start_matches("error: ")
        .to_string()
}
