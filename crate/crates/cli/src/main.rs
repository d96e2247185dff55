//! proxeval command line: synthesize, simulate, ingest, evaluate, report.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

/// Ambient-sensor proximity detection and anti-relay evaluation toolkit.
#[derive(Parser)]
#[command(name = "proxeval", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic record store from a scenario file.
    Synth(commands::SynthArgs),
    /// Run the three-device transaction protocol (emulated or live loopback).
    Simulate(commands::SimulateArgs),
    /// Ingest an external JSONL/CSV dataset into a record store.
    Ingest(commands::IngestArgs),
    /// Run Evaluations 1 and 2 over a record store.
    Evaluate(commands::EvaluateArgs),
    /// Render the report for an existing evaluation output directory.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Simulate(args) => commands::cmd_simulate(args),
        Command::Ingest(args) => commands::cmd_ingest(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::Report(args) => commands::cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(_: CliError) -> ExitCode {
        ExitCode::FAILURE
    }
}
