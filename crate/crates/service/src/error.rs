use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use arcpool_core::session::SessionError;
use arcpool_core::Error;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            detail: detail.into(),
        }
    }

    pub fn schema(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "schema_error", detail)
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "session_not_found",
            format!("no session with id {id}"),
        )
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let detail = e.to_string();
        match e {
            Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Self::new(StatusCode::NOT_FOUND, "dataset_not_found", detail)
            }
            Error::Io { .. } => Self::internal(detail),
            Error::BudgetExceedsPool { .. } => {
                Self::new(StatusCode::BAD_REQUEST, "budget_exceeds_pool", detail)
            }
            Error::UnknownId(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_sample", detail)
            }
            Error::OracleUnavailable { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "partial_batch", detail)
            }
            Error::NonFiniteLoss { .. } | Error::DegenerateVector { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "training_failed", detail)
            }
            _ => Self::schema(detail),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let detail = e.to_string();
        match e {
            SessionError::WrongPhase { .. } => {
                Self::new(StatusCode::CONFLICT, "wrong_phase", detail)
            }
            SessionError::PoolExhausted => Self::new(StatusCode::GONE, "pool_exhausted", detail),
            SessionError::UnknownSample(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_sample", detail)
            }
            SessionError::PartialBatch { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "partial_batch", detail)
            }
            SessionError::InvalidClass { .. } => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_class", detail)
            }
            SessionError::Engine(inner) => inner.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            detail: self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}
