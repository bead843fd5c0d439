use thiserror::Error;

/// Errors surfaced by the correction engine.
#[derive(Debug, Error)]
pub enum NecError {
    /// Malformed line in a line-oriented input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    /// A span violates `0 <= start < end <= len` or overlaps a neighbour.
    #[error("invalid span [{start}, {end}) for text of length {len}: {reason}")]
    InvalidSpan {
        start: usize,
        end: usize,
        len: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("entity catalog is empty")]
    EmptyCatalog,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("binary format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NecError>;
