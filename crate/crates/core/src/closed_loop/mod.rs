//! Closed-loop simulation of `Ẋ = f(X, U(t - D))` under predictor feedback.

mod delay_line;
mod handle;
mod metrics;
mod simulate;
mod sweep;

use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::neural::NnoError;
use crate::predictor::PredictorError;

pub use delay_line::DelayLine;
pub use handle::PredictorHandle;
pub use metrics::{compute_metrics, write_record_csv, Metrics};
pub use simulate::{
    run_closed_loop, run_closed_loop_with, Coupling, Integrator, LoopConfig, RecordMeta, StepView, TrajectoryRecord,
};
pub use sweep::{epsilon_sweep, sample_initial_state, EpsilonRow, SweepConfig, SweepReport};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("grid step {dt} does not divide {span}")]
    GridMismatch { span: f64, dt: f64 },
    #[error("delay line read at {tau} outside window [{lo}, {hi}]")]
    OutOfWindow { tau: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Neural(#[from] NnoError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
