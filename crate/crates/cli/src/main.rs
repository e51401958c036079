//! `intflow`: experiment runner and self-validation entry point.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 validation failure.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "intflow", version, about = "Kernel-weighted integral learning on synthetic streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (falls back to the config, then INTFLOW_OUTPUT).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Print a machine-readable JSON result on stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train on each seed's stream and write per-step logs and summaries.
    Run,
    /// Compare the kernel grid on a drift scenario.
    Ablate,
    /// Run the numerical self-test battery.
    Validate,
    /// Compare trainer modes on identical streams.
    Bench,
}

/// The command's report plus the error to exit with after printing it.
fn dispatch(cli: &Cli) -> Result<(serde_json::Value, Option<CliError>), CliError> {
    if let Command::Validate = cli.command {
        return commands::validate();
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut config = RunConfig::load(path)?;
    config.apply_seed(cli.seed);
    let out = config.output_dir(cli.output.as_deref());
    let value = match cli.command {
        Command::Run => commands::run(&config, &out),
        Command::Ablate => commands::ablate(&config, &out),
        Command::Bench => commands::bench(&config, &out),
        Command::Validate => unreachable!(),
    }?;
    Ok((value, None))
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("intflow: {e}");
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (value, failure) = match dispatch(&cli) {
        Ok(outcome) => outcome,
        Err(e) => return fail(e),
    };
    let text = if cli.json {
        serde_json::to_string_pretty(&value).expect("json value") + "\n"
    } else {
        commands::describe_outcome(&value)
    };
    // a closed pipe downstream is not worth a panic
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
    match failure {
        Some(e) => fail(e),
        None => ExitCode::SUCCESS,
    }
}
