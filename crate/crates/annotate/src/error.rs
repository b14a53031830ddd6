use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] durflow_core::error::Error),
}

pub type Result<T> = std::result::Result<T, AnnotateError>;

impl AnnotateError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownAnnotator(_) | Self::UnknownTask(_) => StatusCode::NOT_FOUND,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Invalid(_) => StatusCode::BAD_REQUEST,
            Self::Io(_) | Self::Json(_) | Self::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}
