use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the geometry, flow, kernel and verifier layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid metric state: {0}")]
    InvalidState(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: field lives on {found}, expected {expected}")]
    GridMismatch { expected: String, found: String },

    #[error("point ({x}, {y}) is outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation not supported on the {backend} backend: {what}")]
    Unsupported { backend: &'static str, what: String },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    StabilityViolation { dt: f64, bound: f64 },

    #[error("curvature blow-up at t = {time}: sup|R| = {curvature:e}")]
    SingularTime { time: f64, curvature: f64 },

    #[error("time {time} is outside the trace window [{start}, {end}]")]
    TraceExhausted { time: f64, start: f64, end: f64 },

    #[error("nonpositive density sample {value:e} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("mass check failed: integral of u is {mass}, expected 1 within {tolerance:e}")]
    MassCheck { mass: f64, tolerance: f64 },

    #[error("inconsistent supremum: sample {value:e} exceeds the declared bound {bound:e}")]
    InconsistentSup { value: f64, bound: f64 },

    #[error("insufficient range: {0}")]
    InsufficientRange(String),

    #[error("shooting failed: {0}")]
    Shooting(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
