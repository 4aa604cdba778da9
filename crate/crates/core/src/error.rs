use thiserror::Error;

/// Errors produced by tensor, factorization, and hierarchy operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid argument value (ranks, thresholds, indices, ...).
    #[error("invalid value: {0}")]
    Value(String),

    /// A computation encountered NaN or infinity.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Hierarchy specification failed validation.
    #[error("invalid hierarchy: {0}")]
    Hierarchy(String),

    /// An all-zero input where a direction or rank is required.
    #[error("zero input: {0}")]
    ZeroInput(&'static str),

    /// The SVD iteration failed to converge.
    #[error("svd did not converge for a {rows}x{cols} matrix")]
    SvdFailed { rows: usize, cols: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed binary tensor file.
    #[error("bad tensor file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
