use nalgebra::DMatrix;
use thiserror::Error;

/// Errors produced by the solver, the covariance layer and the data loaders.
#[derive(Debug, Error)]
pub enum SpcaError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),

    #[error("non-finite objective value at inner iteration {iteration}")]
    NonFinite {
        iteration: usize,
        /// Iterate at which the objective blew up.
        iterate: DMatrix<f64>,
    },

    #[error("line search failed at inner iteration {iteration} after {trials} trials")]
    LineSearch { iteration: usize, trials: usize },

    #[error("invalid data: {0}")]
    DataValidation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SpcaError>;

pub(crate) fn shape_err(what: &str, expected: (usize, usize), got: (usize, usize)) -> SpcaError {
    SpcaError::Shape(format!(
        "{what}: expected {}x{}, got {}x{}",
        expected.0, expected.1, got.0, got.1
    ))
}
