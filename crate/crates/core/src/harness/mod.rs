//! Closed-loop episodes, the two-lap mission, metrics and run artifacts.

pub mod config;
pub mod episode;
pub mod metrics;
pub mod output;

use std::path::Path;

use thiserror::Error;

pub use config::{ControllerKind, DropoutWindow, EpisodeConfig, Mission, PerceptionSettings, TrackConfig, TrackSource};
pub use episode::{run_episode, EpisodeLog, EpisodeStatus, LapEvent, Phase, TelemetryRow};
pub use metrics::{compute_metrics, MetricSample, Metrics};
pub use output::{read_belief_csv, replay_beliefs, write_run};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Track(#[from] crate::track::TrackError),
    #[error(transparent)]
    Sensor(#[from] crate::sensors::SensorError),
    #[error(transparent)]
    Estimator(#[from] crate::estimator::EstimatorError),
    #[error(transparent)]
    Grid(#[from] crate::gridmap::GridError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
    #[error(transparent)]
    Control(#[from] crate::control::ControlError),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error(transparent)]
    Conenet(#[from] crate::conenet::ConenetError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
