//! Command-line front end for ISDA experiments: training runs, λ₀ sweeps,
//! checkpoint evaluation and the oracle verification suites.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{CliError, EXIT_OK, EXIT_PROPERTY_FAILURE};
use crate::verify::Suite;

#[derive(Debug, Parser)]
#[command(name = "isda", version, about = "Implicit semantic data augmentation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write metrics.csv, summary.json and checkpoint.bin.
    Train {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to `output.directory` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle suites and print a JSON report.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every (λ₀, seed) pair and write sweep.csv.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a CSV dataset.
    Eval { checkpoint: PathBuf, csv: PathBuf },
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

/// Runs one command, printing results to stdout and errors to stderr, and
/// returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result: Result<i32, CliError> = match cli.command {
        Command::Train { config, seed, out } => commands::train(&config, seed, out.as_deref()).map(|s| {
            println!("{}", json(&s));
            EXIT_OK
        }),
        Command::Verify { suite, trials, seed } => verify::run_suite(suite, trials, seed).map(|r| {
            println!("{}", json(&r));
            if r.passed {
                EXIT_OK
            } else {
                eprintln!("error: failing checks: {}", r.failures.join(", "));
                EXIT_PROPERTY_FAILURE
            }
        }),
        Command::Sweep {
            config,
            lambdas,
            seeds,
            out,
        } => commands::sweep(&config, &lambdas, &seeds, out.as_deref()).map(|r| {
            print!("{}", r.to_csv());
            println!("selected lambda0 = {}", r.selected);
            EXIT_OK
        }),
        Command::Eval { checkpoint, csv } => commands::eval(&checkpoint, &csv).map(|r| {
            println!("{}", json(&r));
            EXIT_OK
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}
