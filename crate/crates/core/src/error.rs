use std::path::PathBuf;

/// Errors produced anywhere in the planner stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("scenario generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("parse error at {path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
