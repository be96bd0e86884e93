use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid use: {0}")]
    InvalidUse(String),

    #[error(
        "coefficient overflow: mode {highest_mode} of a {basis} expansion cannot be \
         represented on a grid of {n_out} points (capacity {capacity})"
    )]
    CoefficientOverflow {
        basis: &'static str,
        highest_mode: usize,
        n_out: usize,
        capacity: usize,
    },

    #[error("numeric fault in {context}: non-finite value encountered")]
    NumericFault { context: String },

    #[error("degenerate sample {index}: reference field has zero norm")]
    DegenerateSample { index: usize },

    #[error("solver became unstable at t = {time:.4} with dt = {dt:e}; retry with dt <= {suggested_dt:e}")]
    Stability {
        time: f64,
        dt: f64,
        suggested_dt: f64,
    },

    #[error("invalid field specification: {0}")]
    Spec(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
