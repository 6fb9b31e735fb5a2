use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("vector field returned a non-finite derivative at t = {t}")]
    NonFiniteDerivative { t: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("rollout diverged at step {step} (t = {t})")]
    RolloutNonFinite { step: usize, t: f64 },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("log horizon {have} s is shorter than the required {need} s")]
    HorizonTooShort { have: f64, need: f64 },

    #[error("invalid configuration: {field}: {message}")]
    Invalid { field: String, message: String },

    #[error("missing artifact: expected {path}")]
    MissingArtifact { path: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }

    /// True for the error kinds a runner should report as numerical blow-up.
    pub fn is_non_finite(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteDerivative { .. }
                | Error::RolloutNonFinite { .. }
                | Error::NonFiniteLoss { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
