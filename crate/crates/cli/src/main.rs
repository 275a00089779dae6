//! Batch driver for sub-population mortality analyses: fit, predict,
//! cross-validate, simulate, prepare reference tables, and run the
//! regulatory consistency test. Every command is a pure function of its
//! input files, configuration and seed.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mortdef",
    version,
    about = "Bayesian sub-population mortality models on reference tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model by MCMC and write draws, summaries and surfaces
    Fit(RunArgs),
    /// Predict per-age log-mortality for a target year from a fitted run
    Predict(PredictArgs),
    /// Leave-one-year-out cross-validation over one or more models
    Cv(RunArgs),
    /// Simulate a synthetic fund from a model at fixed parameters
    Simulate(SimulateArgs),
    /// Extrapolate a reference table to old ages or interpolate sparse years
    PrepareReference(PrepareArgs),
    /// Chi-square consistency test of observed versus expected deaths
    ConsistencyTest(ConsistencyArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config file; command-line flags override its entries
    #[arg(long)]
    config: Option<String>,
    /// Model id (FD-0, FD-1, AD-FE, AD-AR, AD-GP, TD-AR, TD-GP, GP-S1,
    /// GP-S2); `cv` accepts a comma-separated list
    #[arg(long)]
    model: Option<String>,
    /// Fund CSV (age,year,exposure,deaths)
    #[arg(long)]
    fund: Option<String>,
    /// Reference table CSV (age,year,mx); forbidden for GP-S models
    #[arg(long)]
    reference: Option<String>,
    /// Label recorded for the reference population
    #[arg(long)]
    reference_label: Option<String>,
    /// Training years as A:B (inclusive)
    #[arg(long)]
    train_years: Option<String>,
    /// Held-out year for prediction; must lie outside the training years
    #[arg(long)]
    test_year: Option<i32>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    /// Rank-probability-score truncation
    #[arg(long)]
    dbar: Option<u64>,
    /// Include the k = 0 term of the RPS sum
    #[arg(long)]
    rps_include_k0: bool,
    /// Precomputed prior-mean calibration JSON (GP-S models)
    #[arg(long)]
    calibration: Option<String>,
    /// Reference CSV used only to calibrate GP-S prior means
    #[arg(long)]
    prior_table: Option<String>,
    /// Intercept offset for the prior-mean calibration
    #[arg(long)]
    prior_offset: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Output directory of a previous `fit` (reads run.json and draws.csv)
    #[arg(long)]
    fit: String,
    /// Reference table covering the target year (deflator models)
    #[arg(long)]
    reference: Option<String>,
    /// Target calendar year
    #[arg(long)]
    test_year: i32,
    /// Model id; checked against the fitted run when given
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model id
    #[arg(long)]
    model: String,
    /// JSON file of true parameter values, e.g. {"theta": -0.5, "omega": 0.2}
    #[arg(long)]
    params: String,
    /// Reference table CSV (deflator models)
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    reference_label: Option<String>,
    /// Ages as A:B (default 60:89)
    #[arg(long)]
    ages: Option<String>,
    /// Years as A:B (default 2013:2019)
    #[arg(long)]
    years: Option<String>,
    /// Calibration JSON (GP-S models)
    #[arg(long)]
    calibration: Option<String>,
    /// Exposure CSV to reuse instead of the built-in age pyramid
    #[arg(long)]
    exposures: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct PrepareArgs {
    /// extrapolate | interpolate
    #[arg(long)]
    mode: String,
    /// Input reference CSV
    #[arg(long)]
    input: String,
    #[arg(long)]
    reference_label: Option<String>,
    /// Highest age of the extrapolated table (extrapolate mode)
    #[arg(long)]
    to_age: Option<i32>,
    /// Target years A:B for interpolation
    #[arg(long)]
    years: Option<String>,
    /// Pinned hyperparameters JSON from a previous run's provenance
    #[arg(long)]
    hyperparams: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct ConsistencyArgs {
    /// Fund CSV
    #[arg(long)]
    fund: String,
    /// Reference table CSV giving expected deaths
    #[arg(long)]
    reference: Option<String>,
    /// Fitted run directory; expected deaths from posterior-mean intensities
    #[arg(long)]
    fit: Option<String>,
    #[arg(long)]
    out: String,
}

fn main() {
    let cli = Cli::parse();
    let (out_dir, result) = match cli.command {
        Command::Fit(args) => (args.out.clone(), commands::cmd_fit(&args)),
        Command::Predict(args) => (Some(args.out.clone()), commands::cmd_predict(&args)),
        Command::Cv(args) => (args.out.clone(), commands::cmd_cv(&args)),
        Command::Simulate(args) => (Some(args.out.clone()), commands::cmd_simulate(&args)),
        Command::PrepareReference(args) => {
            (Some(args.out.clone()), commands::cmd_prepare_reference(&args))
        }
        Command::ConsistencyTest(args) => {
            (Some(args.out.clone()), commands::cmd_consistency_test(&args))
        }
    };
    if let Err(err) = result {
        let payload = output::error_json(&err);
        eprintln!("{payload}");
        if let Some(dir) = out_dir {
            let dir = std::path::PathBuf::from(dir);
            if dir.is_dir() {
                let _ = std::fs::write(dir.join("error.json"), format!("{payload}\n"));
            }
        }
        std::process::exit(1);
    }
}
