//! Deterministic discrete-time world and the per-tick mission pipeline.

mod config;
mod report;
mod runner;
mod world;

use thiserror::Error;

use crate::bus::BusError;
use crate::extract::ExtractError;
use crate::graph::GraphError;
use crate::merge::MergeError;
use crate::mission::MissionError;
use crate::rules::RuleError;

pub use config::{has_errors, validate_config, Diagnostic, DroneConfig, PersonConfig, Severity, WorldConfig};
pub use report::{parse_trace_csv, RunReport, Termination, TerminationReason, TraceRow};
pub use runner::{run_scenario, Simulation};
pub use world::{DroneState, PersonState, WorldState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Diagnostic>),
    #[error("rejected setpoint for {drone}: {reason}")]
    Setpoint { drone: String, reason: String },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}
