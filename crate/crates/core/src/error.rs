use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on axis `{axis}`: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("cannot parse architecture: {0}")]
    Architecture(String),

    #[error("unit index {index} out of range 1..={max}")]
    UnitOutOfRange { index: usize, max: usize },

    #[error("enclave admission rejected: needed {needed} bytes, available {available}")]
    OverBudget { needed: u64, available: u64 },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("shared buffer holds {capacity} bytes but payload needs {needed}")]
    BufferCapacity { capacity: usize, needed: usize },

    #[error("no client can host the unit: it needs {needed} bytes, largest TEE has {max_budget}")]
    NoEligibleClients { needed: u64, max_budget: u64 },

    #[error("client {0} has an empty data shard")]
    EmptyShard(usize),

    #[error("aggregation: {0}")]
    Aggregation(String),

    #[error("idx file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("attack: {0}")]
    Attack(String),

    #[error("target accuracy {target} never reached by run `{run}`")]
    TargetNotReached { target: f64, run: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Whether the error stems from what the caller supplied (configuration,
    /// files, names) rather than from running the simulation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Io { .. }
                | Error::Idx { .. }
                | Error::UnknownModel(_)
                | Error::Architecture(_)
                | Error::Json(_)
                | Error::LabelOutOfRange { .. }
                | Error::Attack(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
