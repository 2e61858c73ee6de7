use thiserror::Error;

use crate::backend::BackendError;

/// Errors raised by constructors and pure operations of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid trace: {0}")]
    Trace(String),

    #[error("invalid session: {0}")]
    Session(String),

    #[error("invalid sampling policy: {0}")]
    Policy(String),

    #[error("invalid strategy config: {0}")]
    Strategy(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite logit at index {index}")]
    NonFinite { index: usize },

    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    #[error("repetition penalty must be >= 1, got {0}")]
    Penalty(f64),

    #[error("top-k must be >= 1")]
    TopK,

    #[error("top-p must lie in (0, 1], got {0}")]
    TopP(f64),

    #[error("probability vector has no mass")]
    ZeroMass,

    #[error("trim block bounds invalid: min {min}, max {max}")]
    TrimBounds { min: usize, max: usize },

    #[error("invalid padded batch: {0}")]
    Batch(String),

    #[error("pass@k precondition violated: n={n}, c={c}, k={k}")]
    PassAtK { n: u64, c: u64, k: u64 },

    #[error("invalid extraction pattern: {0}")]
    Pattern(String),

    #[error("records mix schema versions {0} and {1}")]
    MixedSchema(u32, u32),

    #[error("pipeline rejected: {0}")]
    Pipeline(String),

    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
