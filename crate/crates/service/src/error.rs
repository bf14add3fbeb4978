use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("project {0} not found")]
    NotFound(String),

    #[error("revision conflict; current revision is {current}")]
    Conflict { current: u64 },

    #[error("step {step} is not valid for this grid; valid steps: {valid:?}")]
    InvalidStep { step: usize, valid: Vec<usize> },

    #[error("{0}")]
    BadRequest(String),

    #[error(transparent)]
    Core(#[from] cpdewarp_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl StoreError {
    pub fn status(&self) -> StatusCode {
        match self {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Conflict { .. } => StatusCode::CONFLICT,
            StoreError::InvalidStep { .. } | StoreError::BadRequest(_) => StatusCode::BAD_REQUEST,
            StoreError::Core(e) if e.is_data_error() => StatusCode::BAD_REQUEST,
            StoreError::Core(_) | StoreError::Json(_) | StoreError::Io { .. } | StoreError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    fn code(&self) -> &'static str {
        match self {
            StoreError::NotFound(_) => "not_found",
            StoreError::Conflict { .. } => "conflict",
            StoreError::InvalidStep { .. } => "invalid_step",
            StoreError::BadRequest(_) => "bad_request",
            StoreError::Core(e) if e.is_data_error() => "bad_request",
            _ => "internal",
        }
    }
}

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        match &self {
            StoreError::Conflict { current } => body["current_revision"] = json!(current),
            StoreError::InvalidStep { valid, .. } => body["valid_steps"] = json!(valid),
            _ => {}
        }
        (status, Json(body)).into_response()
    }
}
