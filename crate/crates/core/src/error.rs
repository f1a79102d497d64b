//! Error type shared across the crate.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Cholesky factorization failed even after the full jitter schedule.
    NotPositiveDefinite { dim: usize, max_jitter: f64 },
    /// Operand shapes disagree.
    DimensionMismatch { expected: usize, got: usize, context: &'static str },
    /// A variance argument was negative beyond the clamping tolerance.
    NegativeVariance { value: f64 },
    /// A sequence with zero time steps was passed where at least one is needed.
    EmptySequence,
    /// A configuration value violates its documented bounds.
    InvalidConfig(String),
    /// A complexity-report spec is inconsistent.
    InvalidSpec(String),
    /// A data file could not be parsed; `line` is 1-based.
    ParseError { line: usize, message: String },
    /// The CSV header lacks a required column.
    MissingColumn(String),
    /// The sequence is too short for the requested split.
    SequenceTooShort { len: usize, needed: usize },
    /// A channel has zero variance on the training portion; it cannot be standardized.
    DegenerateChannel { channel: String },
    /// The gradient contains NaN or infinite entries.
    NonFiniteGradient { param: String },
    /// I/O failure with context.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotPositiveDefinite { dim, max_jitter } => write!(
                f,
                "matrix of dimension {dim} is not positive definite (jitter up to {max_jitter:e} tried)"
            ),
            Error::DimensionMismatch { expected, got, context } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Error::NegativeVariance { value } => write!(f, "negative variance {value}"),
            Error::EmptySequence => write!(f, "sequence has no time steps"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidSpec(msg) => write!(f, "invalid model spec: {msg}"),
            Error::ParseError { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::MissingColumn(name) => write!(f, "missing column: {name}"),
            Error::SequenceTooShort { len, needed } => {
                write!(f, "sequence of length {len} too short (need at least {needed})")
            }
            Error::DegenerateChannel { channel } => {
                write!(f, "channel {channel} has zero variance on the training portion")
            }
            Error::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient in parameter block {param}")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
