use thiserror::Error;

/// Errors raised by the integral-flow library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid label {0}: binary targets must be 0 or 1")]
    InvalidLabel(f64),

    #[error("non-monotone time: {tau} does not follow {last}")]
    NonMonotoneTime { last: f64, tau: f64 },

    #[error("buffer is empty")]
    EmptyBuffer,

    #[error("kernel weights sum to zero")]
    DegenerateWeights,

    #[error("step size underflow at t={t}: h={h}")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("maximum number of solver steps ({0}) exceeded")]
    MaxStepsExceeded(usize),

    #[error("parameters diverged at t={t}")]
    Divergence { t: f64 },

    #[error("meta-adaptation needs {needed} buffered samples, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("step {index}: {source}")]
    AtStep {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips any `AtStep` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
