use thiserror::Error;

/// Errors produced by the estimator, the training loop and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("non-finite gradient at sample {sample} in iteration {iteration}")]
    NonFiniteGradient { sample: usize, iteration: usize },

    #[error("grid quadrature supports at most 3 dimensions (got {0}); use monte_carlo_volume instead")]
    QuadratureDimension(usize),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Folds(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(expected: usize, found: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            found,
            context,
        }
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Singular(_) | Error::NonFiniteGradient { .. }
        )
    }
}
