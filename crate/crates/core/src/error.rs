use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    DegenerateVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("class index {label} is out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("loss became non-finite ({value}) during training")]
    NonFiniteLoss { value: f64 },

    #[error("at least {required} classes are required, got {actual}")]
    TooFewClasses { required: usize, actual: usize },

    #[error("budget {requested} exceeds available pool of {available}")]
    BudgetExceedsPool { requested: usize, available: usize },

    #[error("labels for {pending} staged samples are still pending")]
    OracleUnavailable { pending: usize },

    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown strategy {0:?} (expected margin, entropy, max, random or coreset)")]
    UnknownStrategy(String),

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate sample id {0}")]
    DuplicateId(u64),

    #[error("unknown sample id {0}")]
    UnknownId(u64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
