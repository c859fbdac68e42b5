//! The error envelope and the HTTP status map.

use std::time::Instant;

use axum::body::Body;
use axum::extract::Request;
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};
use tenet_core::id::{IdKind, OpaqueId};
use tenet_core::{Error, ErrorCode};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub code: ErrorCode,
    pub message: String,
    pub request_id: OpaqueId,
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::InvalidClient | ErrorCode::ExpiredToken | ErrorCode::InvalidToken => StatusCode::UNAUTHORIZED,
        ErrorCode::AccessDenied | ErrorCode::TenantInactive => StatusCode::FORBIDDEN,
        ErrorCode::NotFound => StatusCode::NOT_FOUND,
        ErrorCode::Conflict => StatusCode::CONFLICT,
        ErrorCode::ValidationError => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::InvalidGrant => StatusCode::BAD_REQUEST,
        ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Handler error. Rendered without a body; [`envelope_layer`] fills the
/// body in once the request id is known.
#[derive(Debug)]
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Clone)]
struct Pending(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = status_for(self.0.code).into_response();
        resp.extensions_mut().insert(Pending(self.0));
        resp
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

pub const NO_ROUTE: &str = "no such route";

/// Non-envelope failures produced by the framework itself (rejections,
/// unmatched routes) mapped into the taxonomy.
fn classify(status: StatusCode) -> Error {
    match status {
        StatusCode::NOT_FOUND | StatusCode::METHOD_NOT_ALLOWED => Error::not_found(NO_ROUTE),
        StatusCode::UNAUTHORIZED => Error::invalid_client("authentication required"),
        StatusCode::FORBIDDEN => Error::access_denied("forbidden"),
        s if s.is_client_error() => Error::validation(format!("malformed request ({s})")),
        _ => Error::internal(format!("unexpected failure ({status})")),
    }
}

/// Outermost layer: assigns the request id, turns every non-2xx/3xx
/// response into an envelope, and logs one line per request.
pub async fn envelope_layer(mut req: Request, next: Next) -> Response {
    let request_id = OpaqueId::generate(IdKind::Request);
    req.extensions_mut().insert(request_id.clone());
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();

    let mut resp = next.run(req).await;
    let status = resp.status();
    if status.is_client_error() || status.is_server_error() {
        let error = match resp.extensions_mut().remove::<Pending>() {
            Some(Pending(e)) => e,
            None => {
                // framework rejections carry their reason as plain text
                let body = axum::body::to_bytes(std::mem::replace(resp.body_mut(), Body::empty()), 4096)
                    .await
                    .unwrap_or_default();
                let mut e = classify(status);
                if e.code == ErrorCode::ValidationError && !body.is_empty() {
                    e.message = String::from_utf8_lossy(&body).into_owned();
                }
                e
            }
        };
        let envelope = ErrorEnvelope { code: error.code, message: error.message, request_id: request_id.clone() };
        resp = (status_for(error.code), axum::Json(envelope)).into_response();
    }
    if let Ok(v) = HeaderValue::from_str(&request_id.to_string()) {
        resp.headers_mut().insert(REQUEST_ID_HEADER, v);
    }
    tracing::info!(
        request_id = %request_id,
        %method,
        path,
        status = resp.status().as_u16(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        "request"
    );
    resp
}
