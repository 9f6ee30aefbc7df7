use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::{json, Value};

use autoclima_core::sim::run::CommandError;

/// Error document returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error_code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, error_code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            error_code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn no_session() -> Self {
        Self::new(StatusCode::NOT_FOUND, "no_session", "no session is running; POST /api/session first")
    }

    pub fn bad_body(message: impl Into<String>, path: &str) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", message).with_detail(json!({ "path": path }))
    }
}

impl From<CommandError> for ApiError {
    fn from(e: CommandError) -> Self {
        let msg = e.to_string();
        match e {
            CommandError::IndexOutOfRange { index, len } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "index_out_of_range", msg)
                .with_detail(json!({ "index": index, "len": len })),
            CommandError::OutOfBounds { value, min, max } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "out_of_bounds", msg)
                .with_detail(json!({ "value": finite_or_null(value), "min": min, "max": max })),
            CommandError::Automated(index) => Self::new(StatusCode::CONFLICT, "automated", msg)
                .with_detail(json!({ "index": index, "hint": format!("POST /api/release {{\"index\": {index}}} first") })),
            CommandError::NoProposal(index) => {
                Self::new(StatusCode::CONFLICT, "no_proposal", msg).with_detail(json!({ "index": index }))
            }
            CommandError::NotAutomated(index) => {
                Self::new(StatusCode::CONFLICT, "not_automated", msg).with_detail(json!({ "index": index }))
            }
        }
    }
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}
