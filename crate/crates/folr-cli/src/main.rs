//! `folr` command line: smooth raw curves, fit and apply functional ordinal
//! regression models, run cross-validated comparisons, and generate
//! synthetic datasets.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod errors;

use errors::CliError;

#[derive(Parser)]
#[command(name = "folr", version, about = "Ordinal regression with functional covariates")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Smooth raw curves into basis coefficients
    Smooth(SmoothArgs),
    /// Fit an ordinal model on smoothed coefficients
    Fit(FitArgs),
    /// Predict classes for smoothed coefficients with a fitted model
    Predict(PredictArgs),
    /// Cross-validated comparison of prediction pipelines
    Crossval(CrossvalArgs),
    /// Draw a synthetic dataset from a generative spec
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisKindArg {
    Bspline,
    Monomial,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Lad,
    Mode,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArmArg {
    /// Ordinal regression on the final observed value of each curve
    LastValue,
    /// Functional model, unpenalized maximum likelihood
    Folr,
    /// Functional model with a cross-validated L1 penalty
    FolrLasso,
}

#[derive(Args)]
pub struct SmoothArgs {
    /// Long-format curve CSV (curve_id,t,value)
    #[arg(long)]
    pub curves: PathBuf,
    /// Basis family for the smoothed representation
    #[arg(long, value_enum, default_value = "bspline")]
    pub basis: BasisKindArg,
    /// Number of basis functions
    #[arg(long)]
    pub size: usize,
    /// B-spline order (ignored for monomial bases)
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Roughness penalty weight on the integrated squared second derivative
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Right end of the domain [0, T]; defaults to the largest observed time
    #[arg(long)]
    pub domain: Option<f64>,
    /// Output coefficient CSV (curve_id,c1..cM)
    #[arg(long)]
    pub out: PathBuf,
    /// Output basis JSON; defaults to <out>.basis.json
    #[arg(long)]
    pub out_basis: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitArgs {
    /// Coefficient CSV produced by `smooth`
    #[arg(long)]
    pub coeffs: PathBuf,
    /// Basis JSON describing the coefficient columns
    #[arg(long)]
    pub curve_basis: PathBuf,
    /// Label CSV (curve_id,label), 1-based labels
    #[arg(long)]
    pub labels: PathBuf,
    /// Basis family for the coefficient function
    #[arg(long, value_enum, default_value = "bspline")]
    pub beta_basis: BasisKindArg,
    /// Number of coefficient-function basis functions (0 = thresholds only)
    #[arg(long)]
    pub beta_size: usize,
    /// B-spline order of the coefficient-function basis
    #[arg(long, default_value_t = 4)]
    pub beta_order: usize,
    /// L1 penalty weight (scaled by the number of observations)
    #[arg(long, conflicts_with = "no_penalty")]
    pub lasso: Option<f64>,
    /// Plain maximum likelihood
    #[arg(long)]
    pub no_penalty: bool,
    /// Standardize reduced covariates during optimization
    #[arg(long)]
    pub standardize: bool,
    /// Recorded in the model metadata
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Model JSON produced by `fit`
    #[arg(long)]
    pub model: PathBuf,
    /// Coefficient CSV on the model's curve basis
    #[arg(long)]
    pub coeffs: PathBuf,
    /// Decision rule; `lad` never evaluates class probabilities
    #[arg(long, value_enum, default_value = "lad")]
    pub rule: RuleArg,
    /// Output prediction CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CrossvalArgs {
    /// Long-format curve CSV
    #[arg(long)]
    pub curves: PathBuf,
    /// Label CSV
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of folds
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Pipelines to compare
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ArmArg::LastValue, ArmArg::Folr, ArmArg::FolrLasso])]
    pub arms: Vec<ArmArg>,
    /// Curve-basis size for smoothing
    #[arg(long, default_value_t = 16)]
    pub curve_size: usize,
    /// Curve-basis B-spline order
    #[arg(long, default_value_t = 4)]
    pub curve_order: usize,
    /// Roughness penalty used when smoothing
    #[arg(long, default_value_t = 0.0)]
    pub smooth_lambda: f64,
    /// Coefficient-function basis size
    #[arg(long, default_value_t = 10)]
    pub beta_size: usize,
    /// Coefficient-function B-spline order
    #[arg(long, default_value_t = 4)]
    pub beta_order: usize,
    /// Decision rule applied by every arm
    #[arg(long, value_enum, default_value = "lad")]
    pub rule: RuleArg,
    /// Right end of the domain [0, T]; defaults to the largest observed time
    #[arg(long)]
    pub domain: Option<f64>,
    /// Standardize reduced covariates during optimization
    #[arg(long)]
    pub standardize: bool,
    /// Fold-partition and inner-selection seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving cv_<arm>.csv files and summary.csv
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Generative spec JSON
    #[arg(long)]
    pub spec: PathBuf,
    /// Output curve CSV
    #[arg(long)]
    pub out_curves: PathBuf,
    /// Output label CSV
    #[arg(long)]
    pub out_labels: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit with its own code; the contract here is 1 for
            // any usage problem. Successful --help/--version still exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Smooth(args) => commands::smooth(args),
        Command::Fit(args) => commands::fit(args),
        Command::Predict(args) => commands::predict(args),
        Command::Crossval(args) => commands::crossval(args),
        Command::Simulate(args) => commands::simulate(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("data error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
