//! Deterministic simulation of organization chains, mutual nodes and the
//! bridge.
//!
//! The same scenario always yields the same event log, metrics and snapshot:
//! keys derive from the seed, every collection is ordered, and events run in
//! (tick, scheduling order).

mod compare;
mod events;
mod metrics;
mod scenario;
mod world;

pub use compare::{compare_designs, compare_table_csv, CompareRow, CompareTemplate};
pub use compare::{message_scenario, BROADCAST_AT, SINGLE_AT};
pub use events::{Event, HopRecord, HopStatus, LogRecord, Summary};
pub use metrics::{EVENT_LOG, METRICS_CSV, SNAPSHOT_JSON};
pub use scenario::{
    ChainSpec, FaultKind, FaultSpec, GrantSpec, LinkSpec, NetworkSpec, PolicySpec, Scenario, TopologySpec, UserSpec,
    WorkloadAction, WorkloadItem,
};
pub use world::{BridgeState, CaseView, ChainSummary, ProvenanceOutcome, RunOutput, Simulation, World, WorldSnapshot};

use crate::topology::Violation;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("scenario parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("invalid topology: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidTopology(Vec<Violation>),
    #[error("scenario references unknown chain {0}")]
    WorkloadReferencesUnknownChain(String),
    #[error("{0} needs the bridge and is not available in the mesh design")]
    UnsupportedInMesh(&'static str),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Validates and runs `scenario` to completion.
pub fn run(scenario: Scenario) -> Result<RunOutput, SimError> {
    Ok(Simulation::new(scenario)?.finish().0)
}
