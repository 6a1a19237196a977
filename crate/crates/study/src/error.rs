use thiserror::Error;

pub type StudyResult<T> = Result<T, StudyError>;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Storage(String),
    #[error(transparent)]
    Core(#[from] ctdiff_core::Error),
}

impl StudyError {
    pub fn code(&self) -> &'static str {
        match self {
            StudyError::Validation(_) => "validation",
            StudyError::Forbidden(_) => "forbidden",
            StudyError::NotFound(_) => "not_found",
            StudyError::Conflict(_) => "conflict",
            StudyError::Storage(_) | StudyError::Core(_) => "internal",
        }
    }
}
