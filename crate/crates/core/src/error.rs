//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TvoError>;

#[derive(Debug, Error)]
pub enum TvoError {
    /// Malformed or out-of-range caller input.
    #[error("invalid input: {0}")]
    Input(String),

    /// A document failed validation; `path` names the offending field.
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("covariance matrix is singular or not positive definite")]
    Rank,

    /// `‖α·ν‖` fell below the degenerate-allocation floor.
    #[error("degenerate allocation (|alpha . nu| = {norm:e}){}", location.as_deref().map(|l| format!(" at {l}")).unwrap_or_default())]
    DegenerateAllocation {
        norm: f64,
        location: Option<String>,
    },

    #[error("operation requires {required} volatility mode")]
    UnsupportedMode { required: &'static str },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("simulation failure: {0}")]
    Simulation(String),

    #[error("training failure: {0}")]
    Training(String),

    #[error("pde solver: {0}")]
    Mode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TvoError {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        TvoError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Whether the error comes from bad inputs (as opposed to a numerical failure).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            TvoError::Input(_)
                | TvoError::Validation { .. }
                | TvoError::NotPositiveDefinite
                | TvoError::UnsupportedMode { .. }
                | TvoError::Precondition(_)
                | TvoError::Mode(_)
                | TvoError::Io(_)
                | TvoError::Json(_)
        )
    }
}
