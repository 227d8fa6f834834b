use thiserror::Error;

/// Crate-wide error type. Validation failures (bad parameters, malformed
/// inputs, shape mismatches) are distinguished from runtime failures of the
/// simulation/optimization pipeline so the CLI can map them to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid device parameters: {0}")]
    InvalidDevice(String),

    #[error("invalid pulse configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("read voltage {voltage} V on row {row} is not sub-threshold (limit {limit} V)")]
    OverThresholdRead {
        row: usize,
        voltage: f64,
        limit: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("optimization failed: {0}")]
    OptimFailed(String),

    #[error("simulation failed: {0}")]
    SimFailed(String),

    #[error("malformed file {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than by the
    /// simulation or an optimizer giving up.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::OptimFailed(_) | Error::SimFailed(_))
    }
}
