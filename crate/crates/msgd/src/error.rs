//! Error type shared across the crate.

use std::path::PathBuf;

/// All failure modes surfaced by the library.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A vector or buffer length does not match what the operation needs.
    #[error("{context}: expected length {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A row index fell outside the matrix.
    #[error("row index {index} out of range for a matrix with {rows} rows")]
    RowIndexOutOfRange { index: usize, rows: usize },

    /// An input or computed value was NaN or infinite.
    #[error("{context} contains a non-finite value")]
    NonFinite { context: &'static str },

    /// A keep probability outside `(0, 1]`.
    #[error("keep probability must satisfy 0 < p <= 1, got {0}")]
    InvalidProbability(f64),

    /// A parameter failed validation; the message names it.
    #[error("{0}")]
    InvalidParameter(String),

    /// The normal equations are singular, so least squares and the strong
    /// convexity constant are undefined.
    #[error("matrix does not have full column rank: normal equations are singular")]
    RankDeficient,

    /// The Jacobi eigenvalue iteration hit its sweep cap before reaching
    /// the requested tolerance.
    #[error(
        "eigenvalue iteration did not reach tolerance {tolerance:e} after \
         {sweeps} sweeps (remaining off-diagonal mass {off_diagonal:e})"
    )]
    EigenNoConvergence {
        tolerance: f64,
        sweeps: usize,
        off_diagonal: f64,
    },

    /// Exhaustive mask enumeration requested for too many columns.
    #[error("mask enumeration over {n} columns needs 2^{n} patterns; the limit is n <= {max}")]
    EnumerationTooLarge { n: usize, max: usize },

    /// The operation needs a reference solution the problem does not carry.
    #[error("operation requires a reference solution but the problem does not carry one")]
    MissingSolution,

    /// A fixed step size at or above the stability threshold.
    #[error("step size {alpha} must lie strictly below 1/L = {limit}")]
    StepTooLarge { alpha: f64, limit: f64 },

    /// Malformed CSV input; `line` is 1-based.
    #[error("{path}: line {line}: {message}")]
    CsvFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// An underlying filesystem failure.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Invalid or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A self-check battery found a violated identity or bound.
    #[error("verification failed: {0}")]
    Verification(String),
}
