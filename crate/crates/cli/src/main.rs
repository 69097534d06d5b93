//! Experiment harness for the feature-cache forecasting engine.
//!
//! Subcommands: `run`, `record` (run with trace emission), `sweep-tau`,
//! `compare`, and `analyze`. Exit codes: 0 success, 1 usage error,
//! 2 runtime failure, 3 format error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forecache_core::{Error, PolicySpec, Result, SchedulerSpec};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "forecache",
    version,
    about = "Feature-cache forecasting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SharedFlags {
    /// Config file (`key = value` lines under [pipeline] / [run] sections)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated run seeds
    #[arg(long)]
    seed: Option<String>,
    /// Prediction policy: reuse | linear:w=<c>|ramp | taylor:m=<int> | rfe:m=<int>
    #[arg(long)]
    policy: Option<String>,
    /// Scheduler: fixed:N=<int> | distance:delta=<float> | rcs:tau=<float>[,scope=first|all]
    #[arg(long)]
    scheduler: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Measure per-step output prediction error with a shadow full compute
    #[arg(long)]
    ghost_reference: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cached sampler once per seed
    Run {
        #[command(flatten)]
        shared: SharedFlags,
        /// Run the plain full-compute reference instead of the cached sampler
        #[arg(long)]
        no_cache: bool,
    },
    /// Run once per seed and record a ground-truth trace
    Record {
        #[command(flatten)]
        shared: SharedFlags,
    },
    /// Sweep the accumulation threshold over a grid
    SweepTau {
        #[command(flatten)]
        shared: SharedFlags,
        /// Comma-separated threshold grid (at least two values)
        #[arg(long)]
        taus: String,
    },
    /// Compare policies under one scheduler, optionally at matched NFC
    Compare {
        #[command(flatten)]
        shared: SharedFlags,
        /// Comma-separated policy list
        #[arg(long)]
        policies: String,
        /// Tune each policy's scheduler until mean NFC is within 0.5 of this
        #[arg(long)]
        target_nfc: Option<f64>,
    },
    /// Compute diagnostics over a recorded trace
    Analyze {
        #[command(flatten)]
        shared: SharedFlags,
        /// Trace file to analyze
        #[arg(long)]
        trace: PathBuf,
    },
}

/// Resolves config file plus flag overrides into one experiment config.
fn resolve(shared: &SharedFlags) -> Result<ExperimentConfig> {
    let mut config = match &shared.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            ExperimentConfig::from_file_text(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = &shared.seed {
        config.seeds = config::parse_seed_list(seeds)?;
    }
    if let Some(policy) = &shared.policy {
        config.policy = PolicySpec::parse(policy)?;
    }
    if let Some(scheduler) = &shared.scheduler {
        config.scheduler = SchedulerSpec::parse(scheduler)?;
    }
    if let Some(out) = &shared.out {
        config.out_dir = out.clone();
    }
    if shared.ghost_reference {
        config.ghost_reference = true;
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { shared, no_cache } => {
            let config = resolve(&shared)?;
            commands::cmd_run(&config, false, no_cache)
        }
        Command::Record { shared } => {
            let config = resolve(&shared)?;
            commands::cmd_run(&config, true, false)
        }
        Command::SweepTau { shared, taus } => {
            let config = resolve(&shared)?;
            let grid = config::parse_float_list(&taus)?;
            commands::cmd_sweep_tau(&config, &grid)
        }
        Command::Compare {
            shared,
            policies,
            target_nfc,
        } => {
            let config = resolve(&shared)?;
            let policies: Vec<PolicySpec> = policies
                .split(',')
                .map(|s| PolicySpec::parse(s.trim()))
                .collect::<Result<_>>()?;
            commands::cmd_compare(&config, &policies, target_nfc)
        }
        Command::Analyze { shared, trace } => {
            let config = resolve(&shared)?;
            let replay = match (&shared.policy, &shared.scheduler) {
                (Some(_), Some(_)) => Some((&config.policy, &config.scheduler)),
                _ => None,
            };
            commands::cmd_analyze(&trace, &config.out_dir, replay)
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => 1,
        Error::Format(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are not usage errors
            let benign = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if benign {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(exit_code_for(&err))
        }
    }
}
