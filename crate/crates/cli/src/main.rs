//! Command-line front end for long-tailed class-incremental experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ltcil::harness::{prepare_seed, run_experiment, sweep, ExperimentConfig, RunOptions, SweepAxis};
use ltcil::Error;

#[derive(Parser)]
#[command(name = "ltcil", version, about = "Long-tailed class-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write the result tables.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Reuse a non-empty output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Run one experiment per value of an axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// rho, memory_budget or num_tasks.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Print the task sequence of one seed as JSON.
    Manifest {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a configuration, then print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = if error.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
        Failure { code, error }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

/// An unreadable config file is a configuration problem, not a runtime one.
fn parse_config(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    ltcil::harness::parse_config(path).map_err(|error| Failure {
        code: EXIT_CONFIG,
        error,
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, overwrite } => {
            let cfg = parse_config(&config)?;
            let summary = run_experiment(&cfg, RunOptions { overwrite })?;
            println!(
                "{}: average incremental accuracy {:.4} ± {:.4} over {} seed(s)",
                summary.output_dir.display(),
                summary.mean,
                summary.std,
                summary.seeds.len()
            );
        }
        Command::Sweep {
            config,
            axis,
            values,
            overwrite,
        } => {
            let cfg = parse_config(&config)?;
            let axis: SweepAxis = axis.parse()?;
            for s in sweep(&cfg, axis, &values, RunOptions { overwrite })? {
                println!("{}: {:.4} ± {:.4}", s.output_dir.display(), s.mean, s.std);
            }
        }
        Command::Manifest { config, seed } => {
            let cfg = parse_config(&config)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let data = prepare_seed(&cfg, seed)?;
            println!("{}", serde_json::to_string_pretty(&data.sequence)?);
        }
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            println!("{}", cfg.to_json_pretty());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error}");
            ExitCode::from(code)
        }
    }
}
