use thiserror::Error;

/// Errors raised by the workbench.
#[derive(Debug, Error)]
pub enum EngageError {
    #[error("invalid model bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("normalizer undefined: baseline cumulative regret {0} is not positive")]
    UndefinedNormalizer(f64),

    #[error("patient {0} already carries the motivating action")]
    AlreadyAugmented(usize),

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<EngageError>,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EngageError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        EngageError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Wraps the error with run identification.
    pub fn in_run(self, context: impl Into<String>) -> Self {
        EngageError::Run {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, EngageError>;
