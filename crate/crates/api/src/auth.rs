//! Authorization header parsing and the agent confinement layer.

use axum::extract::{FromRequestParts, MatchedPath, OptionalFromRequestParts, Request};
use axum::http::request::Parts;
use axum::http::{header, Method};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use tenet_core::token::{TokenClaims, TokenType};
use tenet_core::vault::Caller;
use tenet_core::{ClientCredentials, Error};

use crate::error::ApiError;
use crate::server::AppState;

pub const OPERATOR_KEY_HEADER: &str = "x-operator-key";

/// What the Authorization header carried.
#[derive(Debug, Clone)]
pub enum Credentials {
    Basic(ClientCredentials),
    Bearer(String),
}

impl Credentials {
    pub fn caller(&self) -> Caller<'_> {
        match self {
            Credentials::Basic(c) => Caller::Client(c),
            Credentials::Bearer(t) => Caller::Bearer(t),
        }
    }
}

pub fn parse_authorization(value: &str) -> Option<Credentials> {
    let (scheme, rest) = value.trim().split_once(' ')?;
    let rest = rest.trim();
    if scheme.eq_ignore_ascii_case("bearer") {
        return (!rest.is_empty()).then(|| Credentials::Bearer(rest.to_string()));
    }
    if scheme.eq_ignore_ascii_case("basic") {
        let decoded = String::from_utf8(STANDARD.decode(rest).ok()?).ok()?;
        let (id, secret) = decoded.split_once(':')?;
        return Some(Credentials::Basic(ClientCredentials::new(id, secret)));
    }
    None
}

fn from_parts(parts: &Parts) -> Option<Credentials> {
    parts
        .headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(parse_authorization)
}

impl<S: Send + Sync> FromRequestParts<S> for Credentials {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        from_parts(parts).ok_or_else(|| ApiError(Error::invalid_client("missing or malformed Authorization header")))
    }
}

impl<S: Send + Sync> OptionalFromRequestParts<S> for Credentials {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Option<Self>, ApiError> {
        Ok(from_parts(parts))
    }
}

/// HTTP basic client credentials (tenant, service account or agent).
pub struct Basic(pub ClientCredentials);

impl<S: Send + Sync> FromRequestParts<S> for Basic {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        match from_parts(parts) {
            Some(Credentials::Basic(c)) => Ok(Basic(c)),
            _ => Err(ApiError(Error::invalid_client("client credentials required (HTTP basic)"))),
        }
    }
}

/// The operator key header, if sent.
pub struct OperatorKey(pub Option<String>);

impl<S: Send + Sync> FromRequestParts<S> for OperatorKey {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        Ok(OperatorKey(
            parts
                .headers
                .get(OPERATOR_KEY_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string),
        ))
    }
}

impl OperatorKey {
    pub fn required(self) -> Result<String, ApiError> {
        self.0.ok_or_else(|| ApiError(Error::access_denied("operator key required")))
    }
}

/// The one route an agent token may call.
pub const AGENT_ROUTE: (&str, &str) = ("GET", "/api/v1/secrets/{cred}");

/// Agent tokens only fetch credentials. Any other route presented with a
/// signature-valid agent token is refused before its handler runs.
pub async fn agent_confinement(
    axum::extract::State(state): axum::extract::State<AppState>,
    req: Request,
    next: Next,
) -> Response {
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(parse_authorization);
    if let Some(Credentials::Bearer(token)) = bearer {
        let is_agent = state
            .tenet
            .codec()
            .verify::<TokenClaims>(&token)
            .is_ok_and(|c| c.typ == TokenType::Agent);
        let route = req.extensions().get::<MatchedPath>().map(|m| m.as_str().to_string());
        let allowed = req.method() == Method::GET && route.as_deref() == Some(AGENT_ROUTE.1);
        if is_agent && !allowed {
            return ApiError(Error::access_denied("agent tokens may only fetch credentials")).into_response();
        }
    }
    next.run(req).await
}
