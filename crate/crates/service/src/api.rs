//! Request and response bodies, and the error envelope.

use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dynassign::session::{SessionSpec, TraceEntry};
use dynassign::{Error, Recommendation};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const SCHEMA: &str = "v1";

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub spec: SessionSpec,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RecommendRequest {
    /// A single arrival.
    #[serde(default)]
    pub vector: Option<Vec<f64>>,
    /// Several arrivals observed together.
    #[serde(default)]
    pub vectors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub what_if: bool,
    #[serde(default)]
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub schema: String,
    pub session_id: String,
    /// Ordinal of the first arrival the recommendations cover.
    pub ordinal: usize,
    pub what_if: bool,
    pub recommendations: Vec<Recommendation>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CommitRequest {
    pub ordinal: usize,
    pub agent: String,
    #[serde(default)]
    pub item_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommitResponse {
    pub schema: String,
    pub session_id: String,
    pub ordinal: usize,
    pub agent: String,
    pub recommended_agent: Option<String>,
    #[serde(rename = "override")]
    pub is_override: bool,
    pub seq: u64,
    pub remaining: Vec<u32>,
    pub closed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceResponse {
    pub schema: String,
    pub session_id: String,
    pub entries: Vec<TraceEntry>,
}

/// `{schema, code, message, details}` with a matching HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn not_found(session_id: &str) -> Self {
        let mut e = Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{session_id}`"));
        e.details = json!({ "session_id": session_id });
        e
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let message = err.to_string();
        let (status, code, details) = match &err {
            Error::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input", Value::Null),
            Error::Infeasible(_) => (StatusCode::UNPROCESSABLE_ENTITY, "infeasible", Value::Null),
            Error::EmptyPool => (StatusCode::BAD_REQUEST, "empty_pool", Value::Null),
            Error::UnknownAgent(id) => (StatusCode::BAD_REQUEST, "unknown_agent", json!({ "agent": id })),
            Error::DimensionMismatch { expected, actual } => (
                StatusCode::BAD_REQUEST,
                "dimension_mismatch",
                json!({ "expected": expected, "actual": actual }),
            ),
            Error::NoCapacity => (StatusCode::CONFLICT, "no_capacity", Value::Null),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict", Value::Null),
            Error::GuardExceeded(_) => (StatusCode::BAD_REQUEST, "guard_exceeded", Value::Null),
            Error::Parse(_) => (StatusCode::BAD_REQUEST, "parse_error", Value::Null),
            Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io_error", Value::Null),
        };
        Self {
            status,
            code,
            message,
            details,
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", rejection.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema": SCHEMA,
            "code": self.code,
            "message": self.message,
            "details": self.details,
        });
        (self.status, Json(body)).into_response()
    }
}
