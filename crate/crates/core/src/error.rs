use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("singular system: {diagnostic}")]
    Singular { diagnostic: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidInput(msg.into())
    }

    pub fn config(field: &str, message: impl Into<String>) -> Self {
        LabError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, LabError::InvalidInput(_) | LabError::Config { .. } | LabError::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
