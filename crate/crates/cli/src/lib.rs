//! Command-line entry points and the HTTP reward-scoring service.

pub mod commands;
pub mod config;
pub mod scoring;
pub mod service;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::AppConfig;

#[derive(Debug, Parser)]
#[command(
    name = "arrowrl",
    version,
    about = "Direction-aware grounding rewards, metrics and training simulation"
)]
pub struct Cli {
    /// TOML settings file; flags and ARROWRL_* variables take precedence.
    #[arg(long, global = true, env = "ARROWRL_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score forward/reversed response pairs.
    Score(commands::ScoreArgs),
    /// Compute R1@m, mIoU and TDD for a prediction file.
    Evaluate(commands::EvaluateArgs),
    /// Run the tabular training simulation.
    Simulate(commands::SimulateArgs),
    /// Apply the curriculum filter to rollout overlaps.
    Filter(commands::FilterArgs),
    /// Categorize queries as time-sensitive or time-insensitive.
    Classify(commands::ClassifyArgs),
    /// Write a synthetic dataset.
    GenSynth(commands::GenSynthArgs),
    /// Run the HTTP scoring service.
    Serve(commands::ServeArgs),
}

/// A command failure with its exit status: 1 for bad input, 2 for internal errors.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Internal(String),
}

impl Failure {
    pub fn input(msg: impl Into<String>) -> Self {
        Failure::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Failure::Internal(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<arrowrl_core::Error> for Failure {
    fn from(e: arrowrl_core::Error) -> Self {
        use arrowrl_core::Error as E;
        match e {
            E::Transport(_)
            | E::Classification { .. }
            | E::NonFiniteRatio { .. }
            | E::InfiniteDivergence { .. }
            | E::ShapeMismatch(_) => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let config = AppConfig::load_or_default(cli.config.as_deref()).map_err(|e| Failure::input(e.to_string()))?;
    match &cli.command {
        Command::Score(a) => commands::score(&config, a),
        Command::Evaluate(a) => commands::evaluate(&config, a),
        Command::Simulate(a) => commands::simulate(&config, a),
        Command::Filter(a) => commands::filter(&config, a),
        Command::Classify(a) => commands::classify(&config, a),
        Command::GenSynth(a) => commands::gen_synth(&config, a),
        Command::Serve(a) => commands::serve(&config, a),
    }
}
