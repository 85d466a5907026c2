use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("not enough negative candidates for user `{user}`: need {needed}, have {available}")]
    NegativeSampling {
        user: String,
        needed: usize,
        available: usize,
    },
    #[error("user `{user}` has only {count} interactions, need at least 3")]
    TooFewInteractions { user: String, count: usize },
    #[error("non-finite loss: training diverged")]
    Divergence,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("bad binary file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
