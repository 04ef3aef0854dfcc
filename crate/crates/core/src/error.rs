use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown label `{0}`")]
    Key(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A conditional probability was requested on an event of zero mass.
    #[error("undefined conditional in group `{group}`: {event} has zero mass")]
    UndefinedConditional { group: String, event: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("infeasible at step {step}: {message}")]
    InfeasibleAtStep { step: usize, message: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for infeasibility and capacity failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) | Error::InfeasibleAtStep { .. } | Error::Capacity(_) => 2,
            _ => 1,
        }
    }
}
