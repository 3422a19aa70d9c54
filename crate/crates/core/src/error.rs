use thiserror::Error;

/// Errors raised by the simulation, estimation and validation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid quantile function: {0}")]
    InvalidQuantile(String),

    #[error("invalid perturbation direction: {0}")]
    InvalidDirection(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {quantity} at step {step}")]
    NonFinite { quantity: &'static str, step: usize },

    #[error("monotone inversion failed: {0}")]
    Inversion(String),

    #[error("paths do not share the same common noise: {0}")]
    NoiseMismatch(String),

    #[error("mass drift {drift:e} at step {step}")]
    MassDrift { drift: f64, step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
