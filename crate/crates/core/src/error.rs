use thiserror::Error;

/// Errors produced by the scheduling and simulation machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MelError {
    /// An argument fell outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter set or fleet description violates a construction invariant.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The requested plan cannot be met within the constraints.
    #[error("infeasible: {reason}")]
    Infeasible {
        reason: String,
        shortfall: Option<u64>,
    },

    /// A numerical routine produced a non-finite value.
    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl MelError {
    pub fn infeasible(reason: impl Into<String>) -> Self {
        MelError::Infeasible {
            reason: reason.into(),
            shortfall: None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, MelError::Infeasible { .. })
    }
}

impl From<std::io::Error> for MelError {
    fn from(err: std::io::Error) -> Self {
        MelError::Io(err.to_string())
    }
}

impl From<csv::Error> for MelError {
    fn from(err: csv::Error) -> Self {
        MelError::Io(err.to_string())
    }
}

pub type Result<T, E = MelError> = std::result::Result<T, E>;
