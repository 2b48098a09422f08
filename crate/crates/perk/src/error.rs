use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerkError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("run aborted: {0}")]
    Abort(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PerkError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(PerkError::InvalidInput(msg.into()))
}

impl From<std::num::ParseFloatError> for PerkError {
    fn from(e: std::num::ParseFloatError) -> Self {
        PerkError::Parse(e.to_string())
    }
}

impl From<std::num::ParseIntError> for PerkError {
    fn from(e: std::num::ParseIntError) -> Self {
        PerkError::Parse(e.to_string())
    }
}
