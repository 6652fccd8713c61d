use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Domain(#[from] bdpre::Error),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Domain(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bdpre", version, about = "Birth-and-death processes in random environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON config: the environment law plus run parameters.
    config: PathBuf,
    /// Upper bound on worker threads (0: all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write every simulated path as CSV (replica, event_index, time, state).
    #[arg(long)]
    dump_paths: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the standing conditions on the law.
    Check(RunArgs),
    /// Estimate the top Lyapunov exponent and classify recurrence.
    Classify(RunArgs),
    /// First-passage-time statistics in one environment.
    Passage(RunArgs),
    /// Velocity: closed form vs empirical N_t / t.
    Velocity(RunArgs),
    /// Direct T_1 samples vs branching reconstructions.
    VerifyDecomposition(RunArgs),
    /// Dump simulated paths as CSV.
    Simulate(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Check(a) => ("check", a),
        Command::Classify(a) => ("classify", a),
        Command::Passage(a) => ("passage", a),
        Command::Velocity(a) => ("velocity", a),
        Command::VerifyDecomposition(a) => ("verify-decomposition", a),
        Command::Simulate(a) => ("simulate", a),
    };
    match commands::run(name, &args.config, args.threads, args.dump_paths.as_deref()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("bdpre {name}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
