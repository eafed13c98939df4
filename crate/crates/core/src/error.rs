use thiserror::Error;

/// Errors shared by every module of the laboratory.
#[derive(Debug, Error)]
pub enum KfpError {
    /// A caller-supplied parameter violates a documented precondition.
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    /// A numerical routine could not reach its target accuracy.
    #[error("numerical failure in {context}: {message}")]
    Numerical { context: &'static str, message: String },

    /// Simulation produced a non-finite state (diverging force table, etc.).
    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KfpError {
    pub fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        KfpError::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    pub fn numerical(context: &'static str, message: impl Into<String>) -> Self {
        KfpError::Numerical {
            context,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, KfpError>;
