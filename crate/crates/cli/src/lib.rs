//! `archgrad` command-line driver.
//!
//! Exit codes: 0 success, 1 numerical or assertion failure, 2 usage or
//! configuration error. Every file goes into the `--out` directory and is
//! written atomically.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

pub use commands::{gradcheck_exit, run_gradcheck, run_oracle_check, run_search, run_toy};
pub use output::{Failure, OutDir, RunManifest};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "ARCHGRAD_OUT";

#[derive(Debug, Parser)]
#[command(name = "archgrad", version, about = "Architectural-gradient estimators and oracles on toy bi-level problems")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "archgrad-out")]
    pub out: PathBuf,

    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scalar toy problem with the closed-form inner optimum.
    Toy(ToyArgs),
    /// Alternating bi-level search from a TOML config.
    Search(SearchArgs),
    /// Cross-check the hypergradient oracles on quadratic instances.
    OracleCheck(OracleArgs),
    /// Gradient-check every tape operation and the super-network loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    FirstOrder,
    SecondOrderDarts,
    Amended,
    Exact,
    BruteForce,
}

/// Estimator selection shared by `toy` and `search`.
#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Amending coefficient.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Virtual step of the second-order DARTS estimator.
    #[arg(long)]
    pub xi: Option<f64>,
    /// Alpha perturbation of the brute-force estimator.
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    /// Alpha learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub init: f64,
    /// Exit 1 unless the run converges.
    #[arg(long)]
    pub expect_converge: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// TOML search config.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha_lr: Option<f64>,
    /// Re-train the discovered genotype and report its accuracy.
    #[arg(long)]
    pub retrain: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Instances per kind.
    #[arg(long, default_value_t = 50)]
    pub seeds: u64,
    #[arg(long, default_value_t = 8)]
    pub dim_omega: usize,
    #[arg(long, default_value_t = 4)]
    pub dim_alpha: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    /// Replace every per-check tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

pub fn run(cli: &Cli) -> ExitCode {
    let out = OutDir::new(&cli.out);
    let result = match &cli.command {
        Command::Toy(a) => run_toy(a, &out),
        Command::Search(a) => run_search(a, &out),
        Command::OracleCheck(a) => run_oracle_check(a, &out),
        Command::Gradcheck(a) => run_gradcheck(a, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
