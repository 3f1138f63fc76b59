//! `trev`: generate data, corrupt labels, train label-noise methods, and
//! aggregate reports.
//!
//! Exit codes are stable for scripting: 0 success, 2 config error,
//! 3 data/IO error, 4 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    /// Maps a core error that occurred while running (config already
    /// validated): numeric trouble is its own exit code, everything else is
    /// a data problem.
    pub fn runtime(err: trev_core::Error) -> Self {
        use trev_core::Error::*;
        let code = match &err {
            Numeric(_) | Singular { .. } | DegenerateRow { .. } => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "trev",
    version,
    about = "Transition-matrix label-noise learning harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate clean datasets from a gaussian config (train.csv, test.csv).
    GenData(RunArgs),
    /// Corrupt the configured data and write the noisy CSV plus the true
    /// transition sidecar.
    Corrupt(RunArgs),
    /// Run the configured method once per seed (seed_<N>/ per run).
    /// TREV_THREADS caps how many seeds run in parallel.
    Train(RunArgs),
    /// Aggregate finished run directories into comparison and curve CSVs.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Run directories (or parents of seed_<N> directories).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Where the aggregate CSVs go.
    #[arg(long, default_value = "trev-report")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(&args.config, args.out, args.seed, args.force),
        Command::Corrupt(args) => commands::corrupt(&args.config, args.out, args.seed, args.force),
        Command::Train(args) => commands::train(&args.config, args.out, args.seed, args.force),
        Command::Report(args) => commands::report(&args.runs, &args.out, args.force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
