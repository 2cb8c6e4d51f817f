use thiserror::Error;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate rotation: angle {angle} is within tolerance of pi")]
    DegenerateRotation { angle: f64 },

    #[error("value {value} outside of range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("insufficient geometry: {0}")]
    InsufficientGeometry(String),

    #[error("insufficient constraints: {surfel_matches} surfel matches, {feature_matches} feature matches")]
    InsufficientConstraints {
        surfel_matches: usize,
        feature_matches: usize,
    },

    #[error("degenerate alignment: normal equations condition number {condition:e}")]
    DegenerateAlignment { condition: f64 },

    #[error("covariance is not invertible (condition number {condition:e})")]
    NonInvertibleCovariance { condition: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
