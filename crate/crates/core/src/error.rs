//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the caching engine, the toy pipeline, and the
/// trace/analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A feature vector's data length does not match its shape, or two
    /// vectors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A feature vector was constructed with NaN or infinite entries.
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    /// A relative error was requested against a reference with zero norm.
    #[error("zero-norm reference feature; relative error is undefined")]
    ZeroReference,

    /// An operation needed more stored samples than the history holds.
    #[error("insufficient history: need {needed}, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    /// A fixed-stride difference was requested on unevenly spaced samples.
    #[error("non-uniform sample spacing: expected stride {expected}, found {found}")]
    NonUniformSpacing { expected: i64, found: i64 },

    /// Invalid pipeline, trajectory, or experiment configuration.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A change-magnitude ratio was requested where the input change is zero.
    #[error("undefined ratio: input change has zero norm (module {module}, t {t}, k {k})")]
    UndefinedRatio { module: usize, t: i64, k: i64 },

    /// A direction statistic was requested on a zero-norm difference.
    #[error("undefined direction: zero-norm difference (module {module}, t {t}, k {k})")]
    UndefinedDirection { module: usize, t: i64, k: i64 },

    /// A least-squares window was rank-deficient beyond the ridge guard.
    #[error("singular least-squares fit in window starting at t {t}")]
    SingularFit { t: i64 },

    /// An analysis was requested on a series too short to support it.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A trace or config file violates its format contract.
    #[error("format error: {0}")]
    Format(String),

    /// The threshold search could not bring NFC within tolerance of the target.
    #[error("bisection failed: {0}")]
    BisectionFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
