//! Cyber-physical co-simulation of a shipboard MVDC microgrid under
//! distributed consensus control, with rootkit-style false-data injection
//! and an ANN-based behavioural-analytics detector.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

pub mod attack;
pub mod cli;
pub mod comms;
pub mod control;
pub mod detector;
pub mod linalg;
pub mod metrics;
pub mod plant;
pub mod run;
pub mod scenario;

pub use attack::{AccessMatrix, AttackKind, AttackSpec, Channel, Polarity};
pub use comms::CommGraph;
pub use control::{AgentState, ControlGains, SecondaryControlState};
pub use detector::{DetectorConfig, DetectorModel, TrainingSet};
pub use metrics::{compute_metrics, DetectionMetrics};
pub use plant::{PlantParams, PlantState};
pub use run::{run_scenario, TimeSeries};
pub use scenario::{parse_scenario, ScenarioConfig};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Run(#[from] run::RunError),
    #[error(transparent)]
    Detector(#[from] detector::DetectorError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
