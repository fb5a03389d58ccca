use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfdeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("time {time} is not a multiple of dt = {dt}")]
    GridAlignment { time: f64, dt: f64 },
    #[error("time {time} is outside the recorded history [{start}, {end}]")]
    OutOfRange { time: f64, start: f64, end: f64 },
    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("path {path} diverged at step {step}")]
    Divergence { path: u64, step: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("path {path} did not couple before the deadline")]
    NotCoupled { path: u64 },
}

pub type Result<T, E = SfdeError> = std::result::Result<T, E>;
