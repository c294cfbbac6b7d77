use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter outside its admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// Reward statistics that cannot produce a bias (third quartile of zero).
    #[error("degenerate reward statistics: {0}")]
    DegenerateStats(String),

    /// A network parameter became NaN or infinite during training.
    #[error("non-finite parameters after {step} steps: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
