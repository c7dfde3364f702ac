//! Path-following controllers: linear time-varying MPC and pure pursuit.

pub mod mpc;
pub mod pure_pursuit;
pub mod qp;

use thiserror::Error;

use crate::track::TrackError;

pub use mpc::{build_ocp, linearize, mpc_step, LtvStep, Mpc, MpcConfig, MpcOutput, MpcStatus, OcpProblem, OcpSolution};
pub use pure_pursuit::{command_to_rates, pure_pursuit_step, PurePursuitCommand, PurePursuitConfig};
pub use qp::{solve_qp, QpError, QpProblem, QpSettings, QpSolution, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid controller configuration: {0}")]
    BadConfig(String),
    #[error("nominal speed {speed} m/s below the model minimum at step {step}")]
    Linearization { step: usize, speed: f64 },
    #[error("corridor empty at step {step}: [{lo}, {hi}] after comfort distance")]
    InfeasibleCorridor { step: usize, lo: f64, hi: f64 },
    #[error("no path point within {limit} m (nearest {distance} m)")]
    OffPath { distance: f64, limit: f64 },
    #[error("localization is {age} s old")]
    StaleBelief { age: f64 },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Track(#[from] TrackError),
}
