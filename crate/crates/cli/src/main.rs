//! Command-line harness: reproduces the simulation figures, exposes the
//! estimators as named verification checks, and emits CSV/SVG/JSON
//! artifacts. Exit codes: 0 ok / all checks pass, 1 runtime error or failed
//! check, 2 configuration error.

mod commands;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "radapt",
    version,
    about = "Random adaptation dynamics over stochastic chains: simulation and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded realization and write trajectory.csv/.svg
    Simulate(commands::SimulateArgs),
    /// Trial-averaged dynamics against the deterministic dynamics
    MeanCompare(commands::MeanCompareArgs),
    /// Run a named check and write verdict.json (exit 0 iff it passes)
    Verify(commands::VerifyArgs),
    /// Absolute probability sequence of a chain window
    Aps(commands::ApsArgs),
    /// Generate a chain and write chain.json
    ChainGen(commands::ChainGenArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => commands::cmd_simulate(args),
        Command::MeanCompare(args) => commands::cmd_mean_compare(args),
        Command::Verify(args) => commands::cmd_verify(args),
        Command::Aps(args) => commands::cmd_aps(args),
        Command::ChainGen(args) => commands::cmd_chain_gen(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
