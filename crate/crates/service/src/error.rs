use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// JSON body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("model '{model}' has no sample {sample}")]
    UnknownSample { model: String, sample: usize },

    #[error("session '{0}' not found")]
    SessionNotFound(String),

    #[error("query {got} is not the pending query {pending}")]
    StaleQuery { got: usize, pending: usize },

    #[error("session has stopped")]
    SessionStopped,

    #[error("step {index} out of range (trajectory length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{0}")]
    InvalidRequest(String),

    #[error(transparent)]
    Engine(#[from] vip_core::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownModel(_) | ServiceError::UnknownSample { .. } | ServiceError::SessionNotFound(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::StaleQuery { .. } | ServiceError::SessionStopped => StatusCode::CONFLICT,
            ServiceError::IndexOutOfRange { .. } | ServiceError::InvalidRequest(_) | ServiceError::Engine(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownModel(_) => "unknown_model",
            ServiceError::UnknownSample { .. } => "unknown_sample",
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::StaleQuery { .. } => "stale_query",
            ServiceError::SessionStopped => "session_stopped",
            ServiceError::IndexOutOfRange { .. } => "index_out_of_range",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::Engine(_) => "engine_error",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
