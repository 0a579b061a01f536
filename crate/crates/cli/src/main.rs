//! `aipcw`: fit hazard-ratio estimators on a CSV dataset, run simulation
//! studies, or export simulated data.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "aipcw", version, about = "Doubly robust Cox hazard-ratio estimation under dependent censoring")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit estimators on a dataset with columns time, delta, group, z1..zp.
    Fit(FitArgs),
    /// Run a simulation study from a TOML config.
    Simulate(SimulateArgs),
    /// Write a simulated dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: std::path::PathBuf,
    /// Comma-separated estimator labels.
    #[arg(long, default_value = "mple,ipcw-cox,aipcw-cox-cox", value_delimiter = ',')]
    pub estimators: Vec<String>,
    /// Cross-fitting folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Floor applied to predicted survival probabilities.
    #[arg(long, default_value_t = 0.01)]
    pub trim: f64,
    /// End of follow-up (default: largest observed time).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Write results here instead of stdout.
    #[arg(long)]
    pub output: Option<std::path::PathBuf>,
    /// Emit JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: std::path::PathBuf,
    /// Report CSV path (the table always goes to stdout).
    #[arg(long)]
    pub output: Option<std::path::PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trim: Option<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated estimator labels replacing the config list.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Emit the report rows as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// one, two or custom-independent.
    #[arg(long, default_value = "one")]
    pub scenario: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub beta_true: f64,
    #[arg(long)]
    pub output: Option<std::path::PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Generate(args) => commands::generate(&args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
