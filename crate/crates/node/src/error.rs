use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use bcer2_core::records::RecordsError;
use serde::Serialize;

/// JSON error body: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.to_owned(), message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "schema-violation", message)
    }

    pub fn invalid_card(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "invalid-card", message)
    }
}

/// The one status each records error maps to.
pub fn status_for(e: &RecordsError) -> StatusCode {
    match e {
        RecordsError::InvalidCard(_) => StatusCode::UNAUTHORIZED,
        RecordsError::Unauthorized { .. } => StatusCode::FORBIDDEN,
        RecordsError::NotFound(_) => StatusCode::NOT_FOUND,
        RecordsError::DuplicateRecordId(_) => StatusCode::CONFLICT,
        RecordsError::SchemaViolation(_) | RecordsError::NoHandler(_) => StatusCode::UNPROCESSABLE_ENTITY,
        RecordsError::Unsupported(_) => StatusCode::METHOD_NOT_ALLOWED,
        RecordsError::ConsensusTimeout | RecordsError::Integrity(_) => StatusCode::SERVICE_UNAVAILABLE,
        RecordsError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<RecordsError> for ApiError {
    fn from(e: RecordsError) -> Self {
        ApiError::new(status_for(&e), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}
