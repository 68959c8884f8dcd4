use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("unschedulable configuration: {0}")]
    Unschedulable(String),

    #[error("trace error at seq {seq}: {reason}")]
    Trace { seq: u64, reason: String },

    #[error("numerical divergence at seq {seq}: {reason}")]
    Diverged { seq: u64, reason: String },

    #[error("snapshots were not retained during replay")]
    SnapshotsNotRetained,

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn trace(seq: u64, reason: impl Into<String>) -> Self {
        Error::Trace {
            seq,
            reason: reason.into(),
        }
    }
}
