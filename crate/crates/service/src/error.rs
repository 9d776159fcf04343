use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub detail: String,
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    detail: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, detail: impl Into<String>) -> Self {
        Self { status, kind, detail: detail.into() }
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail)
    }

    pub fn unprocessable(kind: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, kind, detail)
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

impl From<tvstrata::Error> for ApiError {
    fn from(e: tvstrata::Error) -> Self {
        use tvstrata::Error as E;
        let kind = match &e {
            E::Io { .. } => return Self::internal(e.to_string()),
            E::Format(_) => "format",
            E::Contract(_) => "contract",
            E::Range(_) => "range",
            E::Parameter(_) => "parameter",
            E::InsufficientData { .. } => "insufficient_data",
            E::DegenerateGeometry(_) => "degenerate_geometry",
        };
        Self::unprocessable(kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(Body { error: self.kind, detail: &self.detail })).into_response()
    }
}
