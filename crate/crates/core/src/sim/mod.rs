//! Deterministic discrete-event harness for the whole loop.
//!
//! Time is virtual milliseconds. Nothing reads the wall clock, so a
//! scenario and its seed fix the event trace, the metrics and the exported
//! bytes.

mod engine;
mod export;
mod metrics;
mod runner;
mod scenario;
mod sweep;

use thiserror::Error;

pub use engine::{EventKind, EventQueue, SimEvent, Target};
pub use export::{export_metrics, ExportedFiles};
pub use metrics::{speedup_table, FrameRecord, Metrics, NodeSummary, SpeedupRow, TimelinePoint};
pub use runner::{
    run_scenario, run_scenario_with, AnomalyRecord, KillEvent, KillReason, RescheduleRecord,
    RunOptions, RunReport, Termination,
};
pub use scenario::{ComputeJob, FarmConfig, NodeLayout, RenderModelConfig, Scenario};
pub use sweep::node_scaling_sweep;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
    #[error("horizon reached at {} with {}/{} frames complete", .0.end_time, .0.metrics.frames_completed, .0.metrics.total_frames)]
    HorizonExceeded(Box<RunReport>),
    #[error("runs are not comparable: {0}")]
    MismatchedWorkload(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl SimError {
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::ConfigInvalid(_) => "ConfigInvalid",
            SimError::HorizonExceeded(_) => "HorizonExceeded",
            SimError::MismatchedWorkload(_) => "MismatchedWorkload",
            SimError::Io(_) => "IoFailure",
        }
    }
}
