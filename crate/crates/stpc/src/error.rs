//! Error type shared by all modules.
//!
//! Variants are grouped by origin: algebra-kernel misuse, rule parsing,
//! solver guards, and configuration/I/O problems. The CLI maps them onto
//! process exit codes (see `cli`).

use thiserror::Error;

/// Toolkit-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Khatri–Rao requires equal column counts.
    #[error("column count mismatch: left operand has {left} columns, right operand has {right}")]
    ColumnMismatch { left: usize, right: usize },

    /// Operand shapes are inconsistent with the operation.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// Rule text failed to parse; `position` is a 0-based byte offset into the rule.
    #[error("syntax error at position {position}: {message}")]
    SyntaxError { position: usize, message: String },

    /// Rule references an undeclared variable.
    #[error("unknown variable `{name}` at position {position}")]
    UnknownVariable { name: String, position: usize },

    /// Expression rules are defined for two-valued (Boolean) nodes only.
    #[error("variable `{name}` is not Boolean (arity {arity}); expression rules require arity 2")]
    NonBooleanVariable { name: String, arity: usize },

    /// An explicit rule table or matrix holds an out-of-range entry.
    #[error("invalid rule table for node {node}: {message}")]
    BadTable { node: usize, message: String },

    /// Probability vector is not a distribution.
    #[error("invalid probability distribution: {message}")]
    BadDistribution { message: String },

    /// A matrix required to be positive definite failed the eigenvalue guard.
    #[error("matrix in {context} is not positive definite (min eigenvalue {min_eig:.3e} < 1e-10)")]
    NotPositiveDefinite { context: &'static str, min_eig: f64 },

    /// The sequence tree would exceed the configured cap.
    #[error("horizon cap exceeded: M^T = {required} sequences > cap {cap} (raise `max_sequences` or reduce the horizon)")]
    HorizonCapExceeded { required: u128, cap: u64 },

    /// An augmented vector had several nonzero blocks, so the logical state is ambiguous.
    #[error("ambiguous augmented vector: blocks {blocks:?} are all nonzero beyond tolerance")]
    AmbiguousBlock { blocks: Vec<usize> },

    /// One or more verification checks exceeded their tolerance.
    #[error("verification failed: {failed} check(s) exceeded tolerance (max discrepancy {max_discrepancy:.3e})")]
    VerificationFailed { failed: usize, max_discrepancy: f64 },

    /// Configuration file is syntactically or semantically invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem failure while reading configs or writing reports.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI uses for this error class:
    /// 2 = configuration/input error, 3 = numerical guard failure, 4 = I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ColumnMismatch { .. }
            | Error::DimensionMismatch { .. }
            | Error::SyntaxError { .. }
            | Error::UnknownVariable { .. }
            | Error::NonBooleanVariable { .. }
            | Error::BadTable { .. }
            | Error::BadDistribution { .. }
            | Error::AmbiguousBlock { .. }
            | Error::Config(_) => 2,
            Error::NotPositiveDefinite { .. }
            | Error::HorizonCapExceeded { .. }
            | Error::VerificationFailed { .. } => 3,
            Error::Io(_) => 4,
        }
    }
}
