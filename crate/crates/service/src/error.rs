use axum::http::StatusCode;
use serde::Serialize;
use thiserror::Error;

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bundle: {0}")]
    Config(String),
    #[error("{what} have {got} entries, the bundle expects {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("the bundle has no classifier head, so features cannot be scored")]
    NoHead,
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("{0}")]
    Input(trustgate_core::Error),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    NotImplemented(String),
    #[error("inference command: {0}")]
    ImageCommand(String),
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Dimension { .. } | ServiceError::NoHead | ServiceError::Input(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::NotImplemented(_) => StatusCode::NOT_IMPLEMENTED,
            ServiceError::ImageCommand(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Config(_) | ServiceError::Taxonomy(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Config(_) => "bundle_error",
            ServiceError::Dimension { .. } => "dimension_mismatch",
            ServiceError::NoHead => "no_head",
            ServiceError::Taxonomy(_) => "taxonomy_error",
            ServiceError::Input(_) => "invalid_input",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::NotImplemented(_) => "not_implemented",
            ServiceError::ImageCommand(_) => "inference_command_failed",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code(),
            message: self.to_string(),
        }
    }
}
