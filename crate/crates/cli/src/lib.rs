//! Command-line front end for `battery-sddp-core`: configuration, file
//! formats and parallel drivers for training, simulation and pricing.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use battery_sddp_core::SweepAxis;
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::PriceMethod;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "battery-sddp", version, about = "Battery storage trading and valuation by Markov-chain SDDP")]
pub struct Cli {
    /// Directory receiving every output file.
    #[arg(long, global = true, env = "BATTERY_SDDP_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads for scenarios and sweep points (default: all cores).
    #[arg(long, global = true, env = "BATTERY_SDDP_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the AR(1) deviation model to a `timestamp,day_ahead,id1` CSV.
    Fit { csv: PathBuf },
    /// Build the Markov chain and write it as JSON.
    Discretize {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a policy; writes the cut checkpoint and the bound per iteration.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint on simulated days.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Indifference price of the storage.
    Price {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::ClosedForm)]
        method: Method,
        /// Wealth-shift bracket for bisection, in EUR.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.0, 1000.0])]
        bracket: Vec<f64>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Prices along a parameter grid for one or more risk aversions.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Risk aversions; the configured one if omitted.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    ClosedForm,
    Bisection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Axis {
    Capacity,
    Speed,
    Sigma,
}

fn load(config: &Option<PathBuf>) -> CliResult<RunConfig> {
    match config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Fit { csv } => commands::fit(csv, out),
        Command::Discretize { config } => commands::discretize(&load(config)?, out),
        Command::Train { config } => commands::train(&load(config)?, out),
        Command::Simulate { config, checkpoint } => commands::simulate(&load(config)?, checkpoint, out),
        Command::Price { config, method, bracket, tol } => {
            let method = match method {
                Method::ClosedForm => PriceMethod::ClosedForm,
                Method::Bisection => PriceMethod::Bisection,
            };
            commands::price(&load(config)?, method, (bracket[0], bracket[1]), *tol, out)
        }
        Command::Sweep { config, axis, grid, rho } => {
            let axis = match axis {
                Axis::Capacity => SweepAxis::Capacity,
                Axis::Speed => SweepAxis::SpeedFraction,
                Axis::Sigma => SweepAxis::Sigma,
            };
            commands::sweep(&load(config)?, axis, grid, rho, out)
        }
    }
}
