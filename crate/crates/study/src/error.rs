use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("phase `{0}` is closed")]
    PhaseClosed(String),

    #[error("phase `{phase}` is locked until `{requires}` is complete")]
    PhaseLocked { phase: String, requires: String },

    #[error("invalid request: {0}")]
    Invalid(String),

    #[error("annotation log {path} line {line}: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("annotation writer stopped")]
    WriterGone,

    #[error(transparent)]
    Core(#[from] maskaudit_core::Error),
}

pub type Result<T, E = StudyError> = std::result::Result<T, E>;

impl StudyError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StudyError::Io { path: path.into(), source }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            StudyError::NotFound(_) => StatusCode::NOT_FOUND,
            StudyError::PhaseClosed(_) | StudyError::PhaseLocked { .. } => StatusCode::CONFLICT,
            StudyError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::Core(maskaudit_core::Error::InvalidArgument(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
