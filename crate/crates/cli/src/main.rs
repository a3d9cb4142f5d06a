//! `frontcast`: generate synthetic ocean data, train and evaluate CTP and
//! its baselines, sweep architecture and loss settings, audit physics terms
//! and roll forecasts forward.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

mod commands;
mod manifest;
mod options;

use std::fmt::Display;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AuditArgs, EvalArgs, RolloutArgs, SweepArgs, SynthArgs, TrainArgs};

pub const THREADS_ENV: &str = "FRONTCAST_THREADS";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn usage(e: impl Display) -> Self {
        Failure::Usage(e.to_string())
    }

    pub fn runtime(e: impl Display) -> Self {
        Failure::Runtime(e.to_string())
    }

    /// Bad inputs and configurations are usage errors; I/O and numerical
    /// failures during a run are runtime errors.
    pub fn from_core(e: frontcast::Error) -> Self {
        use frontcast::Error as E;
        match e {
            E::Io { .. } | E::Diverged { .. } | E::EmptyMask => Failure::runtime(e),
            _ => Failure::usage(e),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "frontcast", version, about = "Ocean front and velocity forecasting with CNN + attention + physics loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic raster sequence from a JSON config.
    Synth(SynthArgs),
    /// Train a model on the training split of a raster directory.
    Train(TrainArgs),
    /// Score a checkpoint on the test split at several horizons.
    Eval(EvalArgs),
    /// Train and score one configuration per value along an axis.
    Sweep(SweepArgs),
    /// Summarize the finite-difference momentum terms of a sequence.
    PhysicsAudit(AuditArgs),
    /// Roll a checkpoint forward autoregressively from one seed window.
    Rollout(RolloutArgs),
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Failure::runtime)
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::PhysicsAudit(a) => commands::physics_audit(a),
        Command::Rollout(a) => commands::rollout(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
