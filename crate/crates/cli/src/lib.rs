//! Experiment runner around the `privateyes` library: configuration,
//! scheme runs, attacks and the comparison tables.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{attack, compare, execute, run_experiment, RunOutcome};
pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] privateyes::protocol::ProtocolError),
    #[error(transparent)]
    Leak(#[from] privateyes::leakprobe::LeakError),
    #[error(transparent)]
    Fed(#[from] privateyes::fedcore::FedError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
