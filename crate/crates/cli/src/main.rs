//! `cipw` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration, 3 data, 4 domain. Errors are
//! printed to stderr as one JSON line.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(name = "cipw", version, about = "Coarse IPW estimation, moments and partition search")]
pub struct Cli {
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Thm91,
    Prop92,
    LemC1,
    Lem16,
    ThmD1,
    Planted,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Random,
    AntiOutlier,
    WorstBias,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ipw,
    Trimmed,
    Neyman,
    Cipw,
    Dr,
    CoarseDr,
    Robust,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseFrom {
    Empirical,
    Analytic,
}

#[derive(clap::Args, Debug, Serialize, Clone)]
pub struct Perturb {
    /// Perturb the true scores within this ℓ∞ radius.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Random)]
    pub mode: Mode,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Emit a distribution JSON for one of the built-in constructions.
    Synth {
        #[arg(value_enum)]
        name: Construction,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        grid: usize,
        #[arg(long, default_value_t = 10_000)]
        n_intended: u64,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lipschitz: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        mu1: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw a censored dataset as CSV.
    Sample {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        perturb: Perturb,
        /// Include an e_hat column (true scores unless --eps is given).
        #[arg(long)]
        with_scores: bool,
    },
    /// Run an estimator on a dataset CSV.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Distribution for coordinate matching, true scores and μ_t.
        #[arg(long)]
        dist: Option<PathBuf>,
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, value_enum, default_value_t = CoarseFrom::Empirical)]
        coarse: CoarseFrom,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Analytic expectation, bias, variance and RMSE of CIPW.
    Moments {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        perturb: Perturb,
    },
    /// Worst-case RMSE over the ε-ball around the true scores.
    Robust {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        eps: f64,
        /// Coordinate-ascent grid size; exhaustive corners when absent.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Find a fractional partition from a dataset with an e_hat column.
    Find {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dist: Option<PathBuf>,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        k_hint: Option<usize>,
        #[arg(long)]
        lipschitz: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo RMSE of several estimators over the perturbation menu.
    Compare {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long, value_delimiter = ',', default_value = "ipw")]
        estimators: Vec<Method>,
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Min-RMSE instance of a Subset-Sum input.
    Reduce {
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<u64>,
        #[arg(long)]
        target: u64,
        /// Override ε as "p/q" (marks the instance non-conforming).
        #[arg(long)]
        eps: Option<String>,
        /// Evaluate this certificate (0-based indices into a).
        #[arg(long, value_delimiter = ',')]
        certificate: Option<Vec<usize>>,
    },
    /// Exhaustive minimum-MSE partition of a small distribution.
    Oracle {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        n: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = std::env::var("CIPW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    match cmd::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::from(cmd::exit_code(&e))
        }
    }
}
