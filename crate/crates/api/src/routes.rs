//! Endpoint table and handlers. Every handler hands the core call to the
//! blocking pool; the store does synchronous file I/O.

use std::collections::BTreeMap;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{middleware, Form, Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use tenet_core::id::{EntityKind, EntityRef, IdKind, OpaqueId};
use tenet_core::idp::{IdpRegistration, InstitutionMapping, NewIdp, PendingLogin};
use tenet_core::mockidp::IdpTokens;
use tenet_core::oauth::{Introspection, OAuthClientConfig};
use tenet_core::service_account::ServiceAccount;
use tenet_core::agent::AgentRegistration;
use tenet_core::tenant::{AuditRecord, DeactivationAuthority, Decision, Tenant, TenantProfile, TenantStatus};
use tenet_core::token::{TokenClaims, TokenType};
use tenet_core::users::{Group, UserRecord};
use tenet_core::vault::{CredentialMetadata, FetchedCredential, SharingEntry};
use tenet_core::{ClientCredentials, Error, ErrorCode, Tenet};

use crate::auth::{agent_confinement, Basic, Credentials, OperatorKey};
use crate::error::{envelope_layer, ApiError, ApiResult, NO_ROUTE};
use crate::server::AppState;
use crate::wire::*;

/// One row of the endpoint table: method, path, and the operation behind it.
pub struct Route {
    pub method: &'static str,
    pub path: &'static str,
    pub op: &'static str,
}

macro_rules! table {
    ($($method:literal $path:literal => $op:literal),* $(,)?) => {
        pub const ROUTES: &[Route] = &[$(Route { method: $method, path: $path, op: $op }),*];
    };
}

table! {
    "POST" "/api/v1/tenants" => "request_admin_tenant",
    "GET" "/api/v1/tenants" => "list_tenants",
    "POST" "/api/v1/tenants/{id}/decision" => "decide_tenant_request",
    "POST" "/api/v1/tenants/children" => "create_child_tenant",
    "GET" "/api/v1/tenants/{id}" => "get_tenant",
    "GET" "/api/v1/tenants/{id}/children" => "list_children",
    "POST" "/api/v1/tenants/{id}/deactivate" => "deactivate_tenant",
    "POST" "/api/v1/tenants/{id}/rotate" => "rotate_credentials",
    "GET" "/api/v1/audit" => "audit_log",
    "POST" "/oauth2/token" => "grant",
    "GET" "/oauth2/authorize" => "begin_login",
    "GET" "/oauth2/callback" => "complete_login",
    "POST" "/oauth2/revoke" => "revoke",
    "POST" "/oauth2/introspect" => "introspect",
    "POST" "/api/v1/oauth-clients" => "configure_client",
    "GET" "/api/v1/oauth-clients" => "list_clients",
    "POST" "/api/v1/idps" => "register_idp",
    "GET" "/api/v1/idps" => "list_idps",
    "POST" "/api/v1/institution-mappings" => "map_institution",
    "GET" "/api/v1/institution-mappings" => "list_institutions",
    "POST" "/api/v1/users" => "register_user",
    "GET" "/api/v1/users" => "list_users",
    "GET" "/api/v1/users/{id}" => "get_user",
    "PATCH" "/api/v1/users/{id}/enabled" => "set_user_enabled",
    "POST" "/api/v1/groups" => "create_group",
    "GET" "/api/v1/groups" => "list_groups",
    "POST" "/api/v1/groups/{id}/members" => "add_member",
    "DELETE" "/api/v1/groups/{id}/members/{member}" => "remove_member",
    "POST" "/api/v1/service-accounts" => "register_service_account",
    "GET" "/api/v1/service-accounts" => "list_service_accounts",
    "GET" "/api/v1/service-accounts/{id}" => "get_service_account",
    "DELETE" "/api/v1/service-accounts/{id}" => "delete_service_account",
    "POST" "/api/v1/agents" => "register_agent",
    "GET" "/api/v1/agents" => "list_agents",
    "DELETE" "/api/v1/agents/{id}" => "delete_agent",
    "POST" "/api/v1/secrets" => "store_credential",
    "GET" "/api/v1/secrets" => "list_accessible",
    "GET" "/api/v1/secrets/{cred}" => "fetch_credential",
    "PUT" "/api/v1/secrets/{cred}" => "update_credential",
    "DELETE" "/api/v1/secrets/{cred}" => "delete_credential",
    "POST" "/api/v1/secrets/{cred}/shares" => "share_credential",
    "GET" "/api/v1/secrets/{cred}/shares" => "list_shares",
    "DELETE" "/api/v1/secrets/{cred}/shares/{entity}" => "revoke_share",
    "GET" "/mockidp/authorize" => "mock_idp_authorize",
    "POST" "/mockidp/token" => "mock_idp_token",
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/tenants", post(request_tenant).get(list_tenants))
        .route("/api/v1/tenants/children", post(create_child))
        .route("/api/v1/tenants/{id}", get(get_tenant))
        .route("/api/v1/tenants/{id}/decision", post(decide))
        .route("/api/v1/tenants/{id}/children", get(list_children))
        .route("/api/v1/tenants/{id}/deactivate", post(deactivate))
        .route("/api/v1/tenants/{id}/rotate", post(rotate))
        .route("/api/v1/audit", get(audit))
        .route("/oauth2/token", post(token))
        .route("/oauth2/authorize", get(authorize))
        .route("/oauth2/callback", get(callback))
        .route("/oauth2/revoke", post(revoke))
        .route("/oauth2/introspect", post(introspect))
        .route("/api/v1/oauth-clients", post(configure_client).get(list_clients))
        .route("/api/v1/idps", post(register_idp).get(list_idps))
        .route("/api/v1/institution-mappings", post(map_institution).get(list_institutions))
        .route("/api/v1/users", post(register_user).get(list_users))
        .route("/api/v1/users/{id}", get(get_user))
        .route("/api/v1/users/{id}/enabled", patch(set_enabled))
        .route("/api/v1/groups", post(create_group).get(list_groups))
        .route("/api/v1/groups/{id}/members", post(add_member))
        .route("/api/v1/groups/{id}/members/{member}", axum::routing::delete(remove_member))
        .route("/api/v1/service-accounts", post(register_sa).get(list_sas))
        .route("/api/v1/service-accounts/{id}", get(get_sa).delete(delete_sa))
        .route("/api/v1/agents", post(register_agent).get(list_agents))
        .route("/api/v1/agents/{id}", axum::routing::delete(delete_agent))
        .route("/api/v1/secrets", post(store_secret).get(list_secrets))
        .route("/api/v1/secrets/{cred}", get(fetch_secret).put(update_secret).delete(delete_secret))
        .route("/api/v1/secrets/{cred}/shares", post(share).get(list_shares))
        .route("/api/v1/secrets/{cred}/shares/{entity}", axum::routing::delete(revoke_share))
        .route("/mockidp/authorize", get(mock_authorize))
        .route("/mockidp/token", post(mock_token))
        .route_layer(middleware::from_fn_with_state(state.clone(), agent_confinement))
        .fallback(|| async { ApiError(Error::not_found(NO_ROUTE)) })
        .method_not_allowed_fallback(|| async { ApiError(Error::not_found(NO_ROUTE)) })
        .layer(middleware::from_fn(envelope_layer))
        .with_state(state)
}

async fn blocking<T, F>(s: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Tenet) -> tenet_core::Result<T> + Send + 'static,
{
    let tenet = s.tenet.clone();
    tokio::task::spawn_blocking(move || f(&tenet))
        .await
        .map_err(|e| ApiError(Error::internal(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

/// Path ids that do not parse name nothing.
fn path_id(raw: &str, kind: IdKind) -> ApiResult<OpaqueId> {
    OpaqueId::parse_kind(raw, kind).map_err(|_| ApiError(Error::not_found(format!("no such {}", kind.prefix()))))
}

fn decode_payload(b64: &str) -> ApiResult<Vec<u8>> {
    STANDARD
        .decode(b64)
        .map_err(|_| ApiError(Error::validation("payload must be standard base64")))
}

fn created<T: serde::Serialize>(body: T) -> Response {
    (StatusCode::CREATED, Json(body)).into_response()
}

fn found(url: &str) -> Response {
    (StatusCode::FOUND, [(header::LOCATION, url.to_string())]).into_response()
}

// tenants

async fn request_tenant(State(s): State<AppState>, Json(profile): Json<TenantProfile>) -> ApiResult<Response> {
    let tenant_id = blocking(&s, move |t| t.request_admin_tenant(profile)).await?;
    Ok(created(TenantCreated { tenant_id, status: TenantStatus::Requested }))
}

async fn list_tenants(
    State(s): State<AppState>,
    op: OperatorKey,
    Query(filter): Query<StatusFilter>,
) -> ApiResult<Json<Vec<Tenant>>> {
    let key = op.required()?;
    Ok(Json(blocking(&s, move |t| t.list_tenants(&key, filter.status)).await?))
}

async fn decide(
    State(s): State<AppState>,
    op: OperatorKey,
    Path(id): Path<String>,
    Json(req): Json<DecisionRequest>,
) -> ApiResult<Json<DecisionResponse>> {
    let key = op.required()?;
    let tenant_id = path_id(&id, IdKind::Tenant)?;
    let tid = tenant_id.clone();
    let credentials = blocking(&s, move |t| t.decide_tenant_request(&key, &tid, req.decision)).await?;
    let status = match req.decision {
        Decision::Approve => TenantStatus::Active,
        Decision::Deny => TenantStatus::Denied,
    };
    Ok(Json(DecisionResponse { tenant_id, status, credentials }))
}

async fn create_child(
    State(s): State<AppState>,
    Basic(parent): Basic,
    Json(profile): Json<TenantProfile>,
) -> ApiResult<Response> {
    let (tenant_id, credentials) = blocking(&s, move |t| t.create_child_tenant(&parent, profile)).await?;
    Ok(created(ChildCreated { tenant_id, credentials }))
}

/// Reading a tenant takes the operator key or the credentials of that
/// tenant or one of its ancestors.
fn may_view(t: &Tenet, op: Option<&str>, creds: Option<&ClientCredentials>, target: &OpaqueId) -> tenet_core::Result<Tenant> {
    let tenant = t.get_tenant(target)?;
    if let Some(key) = op {
        t.check_operator(key)?;
        return Ok(tenant);
    }
    let creds = creds.ok_or_else(|| Error::invalid_client("operator key or tenant credentials required"))?;
    let ctx = t.authenticate_client(creds)?;
    let mut cur = Some(tenant.clone());
    while let Some(c) = cur {
        if c.tenant_id == ctx.tenant_id {
            return Ok(tenant);
        }
        cur = c.parent_id.map(|p| t.get_tenant(&p)).transpose()?;
    }
    Err(Error::access_denied("tenant is outside the caller's subtree"))
}

fn basic_of(creds: Option<Credentials>) -> Option<ClientCredentials> {
    match creds {
        Some(Credentials::Basic(c)) => Some(c),
        _ => None,
    }
}

async fn get_tenant(
    State(s): State<AppState>,
    op: OperatorKey,
    creds: Option<Credentials>,
    Path(id): Path<String>,
) -> ApiResult<Json<Tenant>> {
    let target = path_id(&id, IdKind::Tenant)?;
    let creds = basic_of(creds);
    Ok(Json(blocking(&s, move |t| may_view(t, op.0.as_deref(), creds.as_ref(), &target)).await?))
}

async fn list_children(
    State(s): State<AppState>,
    op: OperatorKey,
    creds: Option<Credentials>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<Tenant>>> {
    let target = path_id(&id, IdKind::Tenant)?;
    let creds = basic_of(creds);
    Ok(Json(
        blocking(&s, move |t| {
            may_view(t, op.0.as_deref(), creds.as_ref(), &target)?;
            t.list_children(&target)
        })
        .await?,
    ))
}

async fn deactivate(
    State(s): State<AppState>,
    op: OperatorKey,
    creds: Option<Credentials>,
    Path(id): Path<String>,
) -> ApiResult<Json<Tenant>> {
    let target = path_id(&id, IdKind::Tenant)?;
    let authority = match (op.0, basic_of(creds)) {
        (Some(key), _) => DeactivationAuthority::Operator(key),
        (None, Some(c)) => DeactivationAuthority::Parent(c),
        (None, None) => return Err(ApiError(Error::access_denied("operator key or parent credentials required"))),
    };
    Ok(Json(blocking(&s, move |t| t.deactivate_tenant(&authority, &target)).await?))
}

async fn rotate(
    State(s): State<AppState>,
    Basic(creds): Basic,
    Path(id): Path<String>,
) -> ApiResult<Json<tenet_core::tenant::TenantCredentials>> {
    let target = path_id(&id, IdKind::Tenant)?;
    Ok(Json(blocking(&s, move |t| t.rotate_credentials(&creds, &target)).await?))
}

async fn audit(State(s): State<AppState>, op: OperatorKey) -> ApiResult<Json<Vec<AuditRecord>>> {
    let key = op.required()?;
    Ok(Json(
        blocking(&s, move |t| {
            t.check_operator(&key)?;
            t.audit_log()
        })
        .await?,
    ))
}

// oauth2

async fn token(State(s): State<AppState>, creds: Option<Credentials>, Form(form): Form<TokenForm>) -> ApiResult<Response> {
    let client = basic_of(creds).or_else(|| match (&form.client_id, &form.client_secret) {
        (Some(id), Some(secret)) => Some(ClientCredentials::new(id, secret)),
        _ => None,
    });
    let missing_client = || ApiError(Error::invalid_client("client authentication required"));
    match form.grant_type.as_str() {
        "client_credentials" => {
            let client = client.ok_or_else(missing_client)?;
            Ok(Json(blocking(&s, move |t| t.grant_client_credentials(&client)).await?).into_response())
        }
        "refresh_token" => {
            let rt = form
                .refresh_token
                .ok_or_else(|| ApiError(Error::validation("refresh_token is required")))?;
            Ok(Json(blocking(&s, move |t| t.grant_refresh(&rt)).await?).into_response())
        }
        "authorization_code" => {
            let client = client.ok_or_else(missing_client)?;
            let (Some(code), Some(redirect)) = (form.code, form.redirect_uri) else {
                return Err(ApiError(Error::validation("code and redirect_uri are required")));
            };
            Ok(Json(blocking(&s, move |t| t.redeem_login_code(&client, &code, &redirect)).await?).into_response())
        }
        other => Err(ApiError(Error::validation(format!("unsupported grant_type {other:?}")))),
    }
}

async fn authorize(State(s): State<AppState>, Query(q): Query<AuthorizeQuery>) -> ApiResult<Response> {
    let redirect = blocking(&s, move |t| {
        t.begin_login(
            &q.client_id,
            q.idp_hint.as_deref(),
            q.entity_id.as_deref(),
            &q.redirect_uri,
            q.state.as_deref(),
        )
    })
    .await?;
    Ok(found(&redirect.url))
}

/// Back-channel code exchange with the external IdP.
async fn exchange(http: &reqwest::Client, pending: &PendingLogin, code: &str) -> tenet_core::Result<IdpTokens> {
    let rejected = |why: String| Error::access_denied(format!("identity provider token exchange failed: {why}"));
    let resp = http
        .post(&pending.token_endpoint)
        .form(&[
            ("grant_type", "authorization_code"),
            ("code", code),
            ("redirect_uri", pending.callback_url.as_str()),
            ("client_id", pending.broker_client_id.as_str()),
            ("client_secret", pending.broker_client_secret.as_str()),
        ])
        .send()
        .await
        .map_err(|e| rejected(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(rejected(format!("status {}", resp.status())));
    }
    resp.json::<IdpTokens>().await.map_err(|e| rejected(e.to_string()))
}

/// The broker callback. Failures before the session is found are
/// envelopes; after that the browser goes back to the application with
/// an error parameter.
async fn callback(State(s): State<AppState>, Query(q): Query<CallbackQuery>) -> ApiResult<Response> {
    let state = q.state.clone();
    let pending = blocking(&s, move |t| t.consume_session(&state)).await?;
    let fail = |code: ErrorCode| found(&s.tenet.login_error_redirect(&pending, code));
    let code = match (q.error, q.code) {
        (None, Some(code)) => code,
        _ => return Ok(fail(ErrorCode::AccessDenied)),
    };
    let tokens = match exchange(&s.http, &pending, &code).await {
        Ok(t) => t,
        Err(e) => return Ok(fail(e.code)),
    };
    let p = pending.clone();
    let result = blocking(&s, move |t| {
        let user = t.finish_login(&p, &tokens)?;
        t.mint_login_code(&p, &user)
    })
    .await;
    Ok(match result {
        Ok(url) => found(&url),
        Err(ApiError(e)) => fail(e.code),
    })
}

async fn revoke(State(s): State<AppState>, Form(p): Form<TokenParam>) -> ApiResult<Json<Revoked>> {
    blocking(&s, move |t| t.revoke(&p.token)).await?;
    Ok(Json(Revoked { revoked: true }))
}

/// Resource servers introspect with their tenant credentials.
async fn introspect(State(s): State<AppState>, Basic(creds): Basic, Form(p): Form<TokenParam>) -> ApiResult<Json<Introspection>> {
    Ok(Json(
        blocking(&s, move |t| {
            t.authenticate_client(&creds)?;
            Ok(t.introspect(&p.token))
        })
        .await?,
    ))
}

async fn configure_client(
    State(s): State<AppState>,
    Basic(creds): Basic,
    Json(req): Json<NewClientConfig>,
) -> ApiResult<Json<ClientConfigured>> {
    let client_id = blocking(&s, move |t| t.configure_client(&creds, req.kind, req.lifetimes)).await?;
    Ok(Json(ClientConfigured { client_id }))
}

async fn list_clients(State(s): State<AppState>, Basic(creds): Basic) -> ApiResult<Json<Vec<OAuthClientConfig>>> {
    Ok(Json(blocking(&s, move |t| t.list_clients(&creds)).await?))
}

// idp broker

async fn register_idp(State(s): State<AppState>, Basic(creds): Basic, Json(idp): Json<NewIdp>) -> ApiResult<Response> {
    let reg: IdpRegistration = blocking(&s, move |t| t.register_idp(&creds, idp)).await?;
    Ok(created(reg))
}

async fn list_idps(State(s): State<AppState>, Basic(creds): Basic) -> ApiResult<Json<Vec<IdpRegistration>>> {
    Ok(Json(blocking(&s, move |t| t.list_idps(&creds)).await?))
}

async fn map_institution(State(s): State<AppState>, Basic(creds): Basic, Json(m): Json<NewMapping>) -> ApiResult<Response> {
    let (entity_id, alias) = (m.entity_id.clone(), m.alias.clone());
    blocking(&s, move |t| t.map_institution(&creds, &m.entity_id, &m.alias)).await?;
    Ok(created(serde_json::json!({ "entity_id": entity_id, "alias": alias })))
}

async fn list_institutions(State(s): State<AppState>, Basic(creds): Basic) -> ApiResult<Json<Vec<InstitutionMapping>>> {
    Ok(Json(blocking(&s, move |t| t.list_institutions(&creds)).await?))
}

// users and groups

async fn register_user(State(s): State<AppState>, Basic(creds): Basic, Json(u): Json<NewUser>) -> ApiResult<Response> {
    let user_id = blocking(&s, move |t| t.register_user(&creds, &u.username, &u.email, u.attributes)).await?;
    Ok(created(UserCreated { user_id }))
}

async fn list_users(State(s): State<AppState>, Basic(creds): Basic) -> ApiResult<Json<Vec<UserRecord>>> {
    Ok(Json(blocking(&s, move |t| t.list_users(&creds)).await?))
}

async fn get_user(State(s): State<AppState>, Basic(creds): Basic, Path(id): Path<String>) -> ApiResult<Json<UserRecord>> {
    let user = path_id(&id, IdKind::User)?;
    Ok(Json(blocking(&s, move |t| t.get_user(&creds, &user)).await?))
}

async fn set_enabled(
    State(s): State<AppState>,
    Basic(creds): Basic,
    Path(id): Path<String>,
    Json(req): Json<EnabledRequest>,
) -> ApiResult<Json<UserRecord>> {
    let user = path_id(&id, IdKind::User)?;
    Ok(Json(blocking(&s, move |t| t.set_user_enabled(&creds, &user, req.enabled)).await?))
}

async fn create_group(State(s): State<AppState>, Basic(creds): Basic, Json(g): Json<NewGroup>) -> ApiResult<Response> {
    let group_id = blocking(&s, move |t| t.create_group(&creds, &g.name, g.roles)).await?;
    Ok(created(GroupCreated { group_id }))
}

async fn list_groups(State(s): State<AppState>, Basic(creds): Basic) -> ApiResult<Json<Vec<Group>>> {
    Ok(Json(blocking(&s, move |t| t.list_groups(&creds)).await?))
}

async fn add_member(
    State(s): State<AppState>,
    Basic(creds): Basic,
    Path(id): Path<String>,
    Json(req): Json<MemberRequest>,
) -> ApiResult<StatusCode> {
    let group = path_id(&id, IdKind::Group)?;
    blocking(&s, move |t| t.add_member(&creds, &group, &req.member)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn remove_member(
    State(s): State<AppState>,
    Basic(creds): Basic,
    Path((id, member)): Path<(String, String)>,
) -> ApiResult<StatusCode> {
    let group = path_id(&id, IdKind::Group)?;
    let member = EntityRef::parse(&member)?;
    blocking(&s, move |t| t.remove_member(&creds, &group, &member)).await?;
    Ok(StatusCode::NO_CONTENT)
}

// service accounts and agents

async fn register_sa(State(s): State<AppState>, Basic(creds): Basic, Json(a): Json<NewServiceAccount>) -> ApiResult<Response> {
    let (id, secret) = blocking(&s, move |t| t.register_service_account(&creds, &a.name, a.roles, a.attributes)).await?;
    Ok(created(PrincipalCreated { client_id: id.to_string(), id, client_secret: secret }))
}

async fn list_sas(State(s): State<AppState>, Basic(creds): Basic) -> ApiResult<Json<Vec<ServiceAccount>>> {
    Ok(Json(blocking(&s, move |t| t.list_service_accounts(&creds)).await?))
}

async fn get_sa(State(s): State<AppState>, Basic(creds): Basic, Path(id): Path<String>) -> ApiResult<Json<ServiceAccount>> {
    let account = path_id(&id, IdKind::ServiceAccount)?;
    Ok(Json(blocking(&s, move |t| t.get_service_account(&creds, &account)).await?))
}

async fn delete_sa(State(s): State<AppState>, Basic(creds): Basic, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let account = path_id(&id, IdKind::ServiceAccount)?;
    blocking(&s, move |t| t.delete_service_account(&creds, &account)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn register_agent(State(s): State<AppState>, Basic(creds): Basic) -> ApiResult<Response> {
    let (id, secret) = blocking(&s, move |t| t.register_agent(&creds)).await?;
    Ok(created(PrincipalCreated { client_id: id.to_string(), id, client_secret: secret }))
}

async fn list_agents(State(s): State<AppState>, Basic(creds): Basic) -> ApiResult<Json<Vec<AgentRegistration>>> {
    Ok(Json(blocking(&s, move |t| t.list_agents(&creds)).await?))
}

async fn delete_agent(State(s): State<AppState>, Basic(creds): Basic, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let agent = path_id(&id, IdKind::Agent)?;
    blocking(&s, move |t| t.delete_agent(&creds, &agent)).await?;
    Ok(StatusCode::NO_CONTENT)
}

// vault

async fn store_secret(State(s): State<AppState>, creds: Credentials, Json(req): Json<NewSecret>) -> ApiResult<Response> {
    let payload = decode_payload(&req.payload)?;
    let credential_token = blocking(&s, move |t| {
        t.store_credential(&creds.caller(), req.ctype, &payload, &req.description)
    })
    .await?;
    Ok(created(SecretCreated { credential_token }))
}

async fn list_secrets(State(s): State<AppState>, creds: Credentials) -> ApiResult<Json<Vec<CredentialMetadata>>> {
    Ok(Json(blocking(&s, move |t| t.list_accessible(&creds.caller())).await?))
}

/// The three retrieval schemes share this route; the presented principal
/// picks one. Anything else (service accounts, tenant tokens) goes through
/// the generic path.
fn fetch_by_scheme(t: &Tenet, creds: &Credentials, cred: &OpaqueId) -> tenet_core::Result<FetchedCredential> {
    match creds {
        Credentials::Basic(c) => t.fetch_delegated(c, cred),
        Credentials::Bearer(token) => match t.codec().verify::<TokenClaims>(token) {
            Ok(c) if c.typ == TokenType::Agent => t.fetch_as_agent(token, cred),
            Ok(c) if c.typ == TokenType::Access && c.sub.kind == EntityKind::User => t.fetch_as_user(token, cred),
            _ => t.fetch_credential(&creds.caller(), cred),
        },
    }
}

async fn fetch_secret(State(s): State<AppState>, creds: Credentials, Path(cred): Path<String>) -> ApiResult<Json<SecretPayload>> {
    let cred = path_id(&cred, IdKind::Credential)?;
    let token = cred.clone();
    let f = blocking(&s, move |t| fetch_by_scheme(t, &creds, &cred)).await?;
    Ok(Json(SecretPayload {
        credential_token: token,
        ctype: f.ctype,
        payload: STANDARD.encode(&f.payload),
        version: f.version,
    }))
}

async fn update_secret(
    State(s): State<AppState>,
    creds: Credentials,
    Path(cred): Path<String>,
    Json(req): Json<UpdateSecret>,
) -> ApiResult<Json<SecretUpdated>> {
    let cred = path_id(&cred, IdKind::Credential)?;
    let payload = decode_payload(&req.payload)?;
    let version = blocking(&s, move |t| t.update_credential(&creds.caller(), &cred, &payload)).await?;
    Ok(Json(SecretUpdated { version }))
}

async fn delete_secret(State(s): State<AppState>, creds: Credentials, Path(cred): Path<String>) -> ApiResult<StatusCode> {
    let cred = path_id(&cred, IdKind::Credential)?;
    blocking(&s, move |t| t.delete_credential(&creds.caller(), &cred)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn share(
    State(s): State<AppState>,
    creds: Credentials,
    Path(cred): Path<String>,
    Json(req): Json<NewShare>,
) -> ApiResult<StatusCode> {
    let cred = path_id(&cred, IdKind::Credential)?;
    blocking(&s, move |t| t.share_credential(&creds.caller(), &cred, &req.grantee, req.permission)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_shares(State(s): State<AppState>, creds: Credentials, Path(cred): Path<String>) -> ApiResult<Json<Vec<SharingEntry>>> {
    let cred = path_id(&cred, IdKind::Credential)?;
    Ok(Json(blocking(&s, move |t| t.list_shares(&creds.caller(), &cred)).await?))
}

async fn revoke_share(
    State(s): State<AppState>,
    creds: Credentials,
    Path((cred, entity)): Path<(String, String)>,
) -> ApiResult<StatusCode> {
    let cred = path_id(&cred, IdKind::Credential)?;
    let grantee = EntityRef::parse(&entity)?;
    blocking(&s, move |t| t.revoke_share(&creds.caller(), &cred, &grantee)).await?;
    Ok(StatusCode::NO_CONTENT)
}

// built-in mock IdP

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn login_page(params: &BTreeMap<String, String>) -> String {
    let hidden: String = params
        .iter()
        .filter(|(k, _)| *k != "username" && *k != "password")
        .map(|(k, v)| format!("<input type=\"hidden\" name=\"{}\" value=\"{}\">", escape(k), escape(v)))
        .collect();
    format!(
        "<!doctype html><html><head><title>Sign in</title></head><body>\
         <h1>Mock identity provider</h1>\
         <form method=\"get\" action=\"/mockidp/authorize\">{hidden}\
         <label>Username <input name=\"username\"></label>\
         <label>Password <input name=\"password\" type=\"password\"></label>\
         <button type=\"submit\">Sign in</button></form></body></html>"
    )
}

/// Shows a login form, or with `username` and `password` present, checks
/// them and redirects back to the broker with a code.
async fn mock_authorize(State(s): State<AppState>, Query(params): Query<BTreeMap<String, String>>) -> ApiResult<Response> {
    let (Some(user), Some(pass)) = (params.get("username"), params.get("password")) else {
        return Ok(Html(login_page(&params)).into_response());
    };
    let need = |k: &str| {
        params
            .get(k)
            .cloned()
            .ok_or_else(|| ApiError(Error::validation(format!("{k} is required"))))
    };
    let (client_id, redirect_uri) = (need("client_id")?, need("redirect_uri")?);
    let mut url = url::Url::parse(&redirect_uri).map_err(|_| ApiError(Error::validation("redirect_uri is not a URL")))?;
    let (u, p, c, r) = (user.clone(), pass.clone(), client_id, redirect_uri);
    let code = blocking(&s, move |t| t.mock_idp().authorize(&c, &r, &u, &p)).await?;
    url.query_pairs_mut().append_pair("code", &code);
    if let Some(state) = params.get("state") {
        url.query_pairs_mut().append_pair("state", state);
    }
    Ok(found(url.as_str()))
}

async fn mock_token(State(s): State<AppState>, creds: Option<Credentials>, Form(form): Form<TokenForm>) -> ApiResult<Json<IdpTokens>> {
    if form.grant_type != "authorization_code" {
        return Err(ApiError(Error::validation("only authorization_code is supported")));
    }
    let client = basic_of(creds)
        .or_else(|| Some(ClientCredentials::new(form.client_id.clone()?, form.client_secret.clone()?)))
        .ok_or_else(|| ApiError(Error::invalid_client("client authentication required")))?;
    let code = form.code.ok_or_else(|| ApiError(Error::validation("code is required")))?;
    let redirect = form.redirect_uri;
    Ok(Json(
        blocking(&s, move |t| {
            t.mock_idp_token(&code, &client.client_id, &client.client_secret, redirect.as_deref())
        })
        .await?,
    ))
}

