use thiserror::Error;

/// Errors raised by the solver, the diagnostics and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {context} at node {node}")]
    NonFinite { context: &'static str, node: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error("characteristics crossed at node {node}: particles {left} and {right} swapped order")]
    CharacteristicCrossing { node: usize, left: usize, right: usize },

    #[error("assignment size {size} exceeds the cap of {cap}; subsample the clouds")]
    CapExceeded { size: usize, cap: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
