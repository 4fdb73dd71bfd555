use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] pal_core::PalError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServeError {
    fn parts(&self) -> (StatusCode, &'static str, String) {
        match self {
            ServeError::NotFound(d) => (StatusCode::NOT_FOUND, "not_found", d.clone()),
            ServeError::BadRequest(d) => (StatusCode::BAD_REQUEST, "bad_request", d.clone()),
            ServeError::Core(e) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
            ServeError::Internal(d) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", d.clone()),
        }
    }
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        let (status, error, detail) = self.parts();
        if status.is_server_error() {
            log::error!("{detail}");
        }
        (status, Json(json!({ "error": error, "detail": detail }))).into_response()
    }
}

pub type ServeResult<T> = std::result::Result<T, ServeError>;
