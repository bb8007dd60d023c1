//! Command-line entry point for restoration experiments: `train`, `eval`,
//! `oracle`, `benchmark`, and `validate` subcommands over run-config
//! files, with `--<section>.<key> <value>` overrides.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime failure.

mod commands;
mod runconfig;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gridrestore", version, about = "Sequential switching restoration for radial feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured algorithm, one run per seed.
    Train {
        /// Run-config TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
        /// Trailing `--section.key value` pairs override config fields,
        /// e.g. `--train.clip_eps 0.1`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on explicit scenarios.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated scenario seeds; defaults to the config's
        /// eval_scenario_seeds.
        #[arg(long)]
        scenarios: Option<String>,
        /// Argmax actions instead of sampling.
        #[arg(long)]
        greedy: bool,
        /// RNG seed for sampled evaluation.
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive optimal-configuration search for one scenario.
    Oracle {
        #[arg(long)]
        feeder: PathBuf,
        /// Scenario seed.
        #[arg(long)]
        seed: u64,
        /// strict | penalty-free-best
        #[arg(long, default_value = "strict")]
        mode: String,
        /// Optional run config supplying scenario and reward settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and compare the configured algorithms on one table.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Lint a feeder file.
    Validate {
        #[arg(long)]
        feeder: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::Train { config, force, overrides } => commands::train::cmd_train(config, overrides, force),
        Command::Eval {
            config,
            checkpoint,
            scenarios,
            greedy,
            sample_seed,
            out,
        } => commands::eval::cmd_eval(config, checkpoint, scenarios, greedy, sample_seed, out),
        Command::Oracle { feeder, seed, mode, config } => {
            commands::oracle::cmd_oracle(feeder, seed, mode, config)
        }
        Command::Benchmark { config, force, overrides } => {
            commands::benchmark::cmd_benchmark(config, overrides, force)
        }
        Command::Validate { feeder } => commands::validate::cmd_validate(feeder),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
