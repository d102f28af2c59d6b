//! Error type shared by every module in the crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by grid types, mixers, the trainer, and the estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two grids that must share dimensions do not.
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A label map entry is neither a valid class index nor the IGNORE sentinel.
    InvalidLabel {
        pixel: usize,
        label: u16,
        classes: usize,
    },
    /// An argument is outside its documented domain.
    InvalidArgument(String),
    /// A serialized tensor is malformed (bad magic, kind, or payload length).
    Format(String),
    /// A benchmark or experiment configuration violates a constraint.
    Config(String),
    /// The training loop aborted: loss went non-finite or blew past the guard.
    TrainDiverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },
    /// A sample set is too small for the requested estimate.
    TooFewSamples { got: usize, need: usize },
    /// Exhaustive enumeration would exceed the combination guard.
    EnumerationTooLarge { combinations: u128, limit: u128 },
    /// Wrapper around I/O failures (message keeps the error clonable).
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { expected, got } => write!(
                f,
                "shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::InvalidLabel {
                pixel,
                label,
                classes,
            } => write!(
                f,
                "invalid label {} at pixel {}: must be < {} or IGNORE",
                label, pixel, classes
            ),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {}", msg),
            Error::Format(msg) => write!(f, "malformed tensor data: {}", msg),
            Error::Config(msg) => write!(f, "configuration error: {}", msg),
            Error::TrainDiverged {
                iteration,
                loss,
                initial,
            } => write!(
                f,
                "training diverged at iteration {}: loss {} exceeds 10x initial {}",
                iteration, loss, initial
            ),
            Error::TooFewSamples { got, need } => {
                write!(f, "too few samples: got {}, need at least {}", got, need)
            }
            Error::EnumerationTooLarge {
                combinations,
                limit,
            } => write!(
                f,
                "enumeration space has {} combinations, guard is {}",
                combinations, limit
            ),
            Error::Io(msg) => write!(f, "i/o error: {}", msg),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
