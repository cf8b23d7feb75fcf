use thiserror::Error;

pub type Result<T> = std::result::Result<T, QtsmError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QtsmError {
    #[error("dimension mismatch in {what}: expected {expected}, got {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned fundamental matrix at t = {t}: condition estimate {cond:.3e}")]
    IllConditioned { t: f64, cond: f64 },

    #[error("overflow evaluating {what}: exponent {exponent:.6e}")]
    Overflow { what: String, exponent: f64 },

    #[error("integration blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("non-finite state on path {path} at step {step}")]
    PathBlowUp { path: usize, step: usize },
}

impl QtsmError {
    pub(crate) fn dims(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        QtsmError::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            QtsmError::IllConditioned { .. }
                | QtsmError::Overflow { .. }
                | QtsmError::BlowUp { .. }
                | QtsmError::PathBlowUp { .. }
        )
    }
}
