//! Blocking HTTP client for the REST API. One method per endpoint, plus the
//! browser legs of a federated login.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use reqwest::blocking::{RequestBuilder, Response};
use reqwest::header::LOCATION;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use tenet_api::auth::OPERATOR_KEY_HEADER;
use tenet_api::wire::*;
use tenet_api::ErrorEnvelope;
use tenet_core::id::{EntityRef, OpaqueId};
use tenet_core::idp::{IdpRegistration, LoginResult, NewIdp};
use tenet_core::oauth::{ClientKind, Introspection, Lifetimes};
use tenet_core::tenant::{Decision, Tenant, TenantCredentials, TenantProfile, TenantStatus};
use tenet_core::token::TokenResponse;
use tenet_core::users::UserRecord;
use tenet_core::vault::{CredentialMetadata, CredentialType, Permission, SharingEntry};
use tenet_core::ErrorCode;
use url::Url;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{}: {} (status {status}, request {})", envelope.code, envelope.message, envelope.request_id)]
    Api { status: u16, envelope: ErrorEnvelope },
    #[error("cannot reach service: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Api { envelope, .. } => Some(envelope.code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// How a request authenticates.
#[derive(Debug, Clone)]
pub enum Auth {
    None,
    Basic { id: String, secret: String },
    Bearer(String),
    Operator(String),
}

impl Auth {
    pub fn basic(id: impl ToString, secret: impl ToString) -> Auth {
        Auth::Basic { id: id.to_string(), secret: secret.to_string() }
    }

    pub fn from_credentials(c: &TenantCredentials) -> Auth {
        Auth::basic(&c.client_id, &c.client_secret)
    }

    fn apply(&self, req: RequestBuilder) -> RequestBuilder {
        match self {
            Auth::None => req,
            Auth::Basic { id, secret } => req.basic_auth(id, Some(secret)),
            Auth::Bearer(t) => req.bearer_auth(t),
            Auth::Operator(k) => req.header(OPERATOR_KEY_HEADER, k),
        }
    }
}

#[derive(Clone)]
pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

fn transport(e: reqwest::Error) -> ClientError {
    ClientError::Transport(e.to_string())
}

fn query_of(url: &str) -> BTreeMap<String, String> {
    Url::parse(url)
        .map(|u| u.query_pairs().into_owned().collect())
        .unwrap_or_default()
}

impl Client {
    pub fn new(base_url: &str) -> Client {
        let http = reqwest::blocking::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .timeout(Duration::from_secs(30))
            .build()
            .expect("HTTP client builds");
        Client { base: base_url.trim_end_matches('/').to_string(), http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn check(resp: Response) -> Result<Response> {
        let status = resp.status();
        if status.is_success() || status.is_redirection() {
            return Ok(resp);
        }
        let text = resp.text().map_err(transport)?;
        match serde_json::from_str::<ErrorEnvelope>(&text) {
            Ok(envelope) => Err(ClientError::Api { status: status.as_u16(), envelope }),
            Err(_) => Err(ClientError::Protocol(format!("status {status} without an error envelope: {text}"))),
        }
    }

    fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        let resp = Self::check(req.send().map_err(transport)?)?;
        resp.json().map_err(|e| ClientError::Protocol(e.to_string()))
    }

    fn empty(req: RequestBuilder) -> Result<()> {
        Self::check(req.send().map_err(transport)?).map(|_| ())
    }

    fn redirect(req: RequestBuilder) -> Result<String> {
        let resp = Self::check(req.send().map_err(transport)?)?;
        if resp.status() != StatusCode::FOUND {
            return Err(ClientError::Protocol(format!("expected a redirect, got {}", resp.status())));
        }
        resp.headers()
            .get(LOCATION)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
            .ok_or_else(|| ClientError::Protocol("redirect without Location".into()))
    }

    fn get(&self, auth: &Auth, path: &str) -> RequestBuilder {
        auth.apply(self.http.get(self.url(path)))
    }

    fn post(&self, auth: &Auth, path: &str) -> RequestBuilder {
        auth.apply(self.http.post(self.url(path)))
    }

    fn delete(&self, auth: &Auth, path: &str) -> RequestBuilder {
        auth.apply(self.http.delete(self.url(path)))
    }

    // tenants

    pub fn request_tenant(&self, profile: &TenantProfile) -> Result<OpaqueId> {
        let created: TenantCreated = Self::json(self.post(&Auth::None, "/api/v1/tenants").json(profile))?;
        Ok(created.tenant_id)
    }

    pub fn decide(&self, operator_key: &str, tenant: &OpaqueId, decision: Decision) -> Result<DecisionResponse> {
        Self::json(
            self.post(&Auth::Operator(operator_key.into()), &format!("/api/v1/tenants/{tenant}/decision"))
                .json(&DecisionRequest { decision }),
        )
    }

    /// Request plus approval: an active admin tenant and its credentials.
    pub fn admin_tenant(&self, operator_key: &str, profile: &TenantProfile) -> Result<(OpaqueId, TenantCredentials)> {
        let id = self.request_tenant(profile)?;
        let decided = self.decide(operator_key, &id, Decision::Approve)?;
        let creds = decided
            .credentials
            .ok_or_else(|| ClientError::Protocol("approval returned no credentials".into()))?;
        Ok((id, creds))
    }

    pub fn create_child(&self, parent: &Auth, profile: &TenantProfile) -> Result<ChildCreated> {
        Self::json(self.post(parent, "/api/v1/tenants/children").json(profile))
    }

    pub fn get_tenant(&self, auth: &Auth, tenant: &OpaqueId) -> Result<Tenant> {
        Self::json(self.get(auth, &format!("/api/v1/tenants/{tenant}")))
    }

    pub fn list_children(&self, auth: &Auth, tenant: &OpaqueId) -> Result<Vec<Tenant>> {
        Self::json(self.get(auth, &format!("/api/v1/tenants/{tenant}/children")))
    }

    pub fn list_tenants(&self, operator_key: &str, status: Option<TenantStatus>) -> Result<Vec<Tenant>> {
        let req = self.get(&Auth::Operator(operator_key.into()), "/api/v1/tenants");
        Self::json(req.query(&StatusFilter { status }))
    }

    /// `auth` is the operator key or the parent's credentials.
    pub fn deactivate(&self, auth: &Auth, tenant: &OpaqueId) -> Result<Tenant> {
        Self::json(self.post(auth, &format!("/api/v1/tenants/{tenant}/deactivate")))
    }

    pub fn rotate(&self, auth: &Auth, tenant: &OpaqueId) -> Result<TenantCredentials> {
        Self::json(self.post(auth, &format!("/api/v1/tenants/{tenant}/rotate")))
    }

    // oauth2

    pub fn client_credentials(&self, client: &Auth) -> Result<TokenResponse> {
        Self::json(self.post(client, "/oauth2/token").form(&[("grant_type", "client_credentials")]))
    }

    pub fn refresh(&self, refresh_token: &str) -> Result<TokenResponse> {
        Self::json(
            self.post(&Auth::None, "/oauth2/token")
                .form(&[("grant_type", "refresh_token"), ("refresh_token", refresh_token)]),
        )
    }

    pub fn redeem_code(&self, client: &Auth, code: &str, redirect_uri: &str) -> Result<LoginResult> {
        Self::json(self.post(client, "/oauth2/token").form(&[
            ("grant_type", "authorization_code"),
            ("code", code),
            ("redirect_uri", redirect_uri),
        ]))
    }

    pub fn introspect(&self, resource_server: &Auth, token: &str) -> Result<Introspection> {
        Self::json(self.post(resource_server, "/oauth2/introspect").form(&TokenParam { token: token.into() }))
    }

    pub fn revoke(&self, token: &str) -> Result<Revoked> {
        Self::json(self.post(&Auth::None, "/oauth2/revoke").form(&TokenParam { token: token.into() }))
    }

    pub fn configure_client(&self, tenant: &Auth, kind: ClientKind, lifetimes: Lifetimes) -> Result<ClientConfigured> {
        Self::json(self.post(tenant, "/api/v1/oauth-clients").json(&NewClientConfig { kind, lifetimes }))
    }

    // federated login

    pub fn register_idp(&self, tenant: &Auth, idp: &NewIdp) -> Result<IdpRegistration> {
        Self::json(self.post(tenant, "/api/v1/idps").json(idp))
    }

    pub fn map_institution(&self, tenant: &Auth, entity_id: &str, alias: &str) -> Result<()> {
        Self::empty(self.post(tenant, "/api/v1/institution-mappings").json(&NewMapping {
            entity_id: entity_id.into(),
            alias: alias.into(),
        }))
    }

    pub fn list_institutions(&self, tenant: &Auth) -> Result<Vec<tenet_core::idp::InstitutionMapping>> {
        Self::json(self.get(tenant, "/api/v1/institution-mappings"))
    }

    /// The application's redirect into the broker; returns where the
    /// broker sends the browser next.
    pub fn authorize(&self, q: &AuthorizeQuery) -> Result<String> {
        Self::redirect(self.http.get(self.url("/oauth2/authorize")).query(q))
    }

    /// Loads a page (the IdP login form) without credentials.
    pub fn page(&self, url: &str) -> Result<String> {
        let resp = Self::check(self.http.get(url).send().map_err(transport)?)?;
        resp.text().map_err(transport)
    }

    /// Submits the IdP login form; returns the redirect back to the broker.
    pub fn idp_login(&self, idp_url: &str, username: &str, password: &str) -> Result<String> {
        let mut url = Url::parse(idp_url).map_err(|e| ClientError::Protocol(e.to_string()))?;
        url.query_pairs_mut().append_pair("username", username).append_pair("password", password);
        Self::redirect(self.http.get(url.as_str()))
    }

    /// Follows a redirect target that must itself redirect (the broker
    /// callback); returns the next Location.
    pub fn follow(&self, url: &str) -> Result<String> {
        Self::redirect(self.http.get(url))
    }

    /// The whole browser round trip, ending with the code exchange.
    pub fn login(&self, app: &Auth, q: &AuthorizeQuery, username: &str, password: &str) -> Result<LoginResult> {
        let idp = self.authorize(q)?;
        let callback = self.idp_login(&idp, username, password)?;
        let back = self.follow(&callback)?;
        let params = query_of(&back);
        if let Some(err) = params.get("error") {
            return Err(ClientError::Protocol(format!("login failed: {err}")));
        }
        let code = params
            .get("code")
            .ok_or_else(|| ClientError::Protocol(format!("no code in {back}")))?;
        self.redeem_code(app, code, &q.redirect_uri)
    }

    // users and groups

    pub fn register_user(&self, tenant: &Auth, user: &NewUser) -> Result<OpaqueId> {
        let created: UserCreated = Self::json(self.post(tenant, "/api/v1/users").json(user))?;
        Ok(created.user_id)
    }

    pub fn list_users(&self, tenant: &Auth) -> Result<Vec<UserRecord>> {
        Self::json(self.get(tenant, "/api/v1/users"))
    }

    pub fn set_user_enabled(&self, tenant: &Auth, user: &OpaqueId, enabled: bool) -> Result<UserRecord> {
        Self::json(
            tenant
                .apply(self.http.patch(self.url(&format!("/api/v1/users/{user}/enabled"))))
                .json(&EnabledRequest { enabled }),
        )
    }

    pub fn create_group(&self, tenant: &Auth, group: &NewGroup) -> Result<OpaqueId> {
        let created: GroupCreated = Self::json(self.post(tenant, "/api/v1/groups").json(group))?;
        Ok(created.group_id)
    }

    pub fn add_member(&self, tenant: &Auth, group: &OpaqueId, member: &EntityRef) -> Result<()> {
        Self::empty(
            self.post(tenant, &format!("/api/v1/groups/{group}/members"))
                .json(&MemberRequest { member: member.clone() }),
        )
    }

    // service accounts and agents

    pub fn register_service_account(&self, tenant: &Auth, sa: &NewServiceAccount) -> Result<PrincipalCreated> {
        Self::json(self.post(tenant, "/api/v1/service-accounts").json(sa))
    }

    pub fn delete_service_account(&self, tenant: &Auth, id: &OpaqueId) -> Result<()> {
        Self::empty(self.delete(tenant, &format!("/api/v1/service-accounts/{id}")))
    }

    pub fn register_agent(&self, tenant: &Auth) -> Result<PrincipalCreated> {
        Self::json(self.post(tenant, "/api/v1/agents"))
    }

    pub fn delete_agent(&self, tenant: &Auth, id: &OpaqueId) -> Result<()> {
        Self::empty(self.delete(tenant, &format!("/api/v1/agents/{id}")))
    }

    // vault

    pub fn store_secret(&self, owner: &Auth, ctype: CredentialType, payload: &[u8], description: &str) -> Result<OpaqueId> {
        let created: SecretCreated = Self::json(self.post(owner, "/api/v1/secrets").json(&NewSecret {
            ctype,
            payload: STANDARD.encode(payload),
            description: description.into(),
        }))?;
        Ok(created.credential_token)
    }

    /// Returns the type, decoded payload and version.
    pub fn fetch_secret(&self, caller: &Auth, cred: &str) -> Result<(CredentialType, Vec<u8>, u64)> {
        let p: SecretPayload = Self::json(self.get(caller, &format!("/api/v1/secrets/{cred}")))?;
        let bytes = STANDARD
            .decode(&p.payload)
            .map_err(|e| ClientError::Protocol(format!("payload is not base64: {e}")))?;
        Ok((p.ctype, bytes, p.version))
    }

    pub fn update_secret(&self, caller: &Auth, cred: &str, payload: &[u8]) -> Result<u64> {
        let r: SecretUpdated = Self::json(
            caller
                .apply(self.http.put(self.url(&format!("/api/v1/secrets/{cred}"))))
                .json(&UpdateSecret { payload: STANDARD.encode(payload) }),
        )?;
        Ok(r.version)
    }

    pub fn delete_secret(&self, caller: &Auth, cred: &str) -> Result<()> {
        Self::empty(self.delete(caller, &format!("/api/v1/secrets/{cred}")))
    }

    pub fn list_secrets(&self, caller: &Auth) -> Result<Vec<CredentialMetadata>> {
        Self::json(self.get(caller, "/api/v1/secrets"))
    }

    pub fn share(&self, caller: &Auth, cred: &str, grantee: &EntityRef, permission: Permission) -> Result<()> {
        Self::empty(
            self.post(caller, &format!("/api/v1/secrets/{cred}/shares"))
                .json(&NewShare { grantee: grantee.clone(), permission }),
        )
    }

    pub fn list_shares(&self, caller: &Auth, cred: &str) -> Result<Vec<SharingEntry>> {
        Self::json(self.get(caller, &format!("/api/v1/secrets/{cred}/shares")))
    }

    pub fn revoke_share(&self, caller: &Auth, cred: &str, grantee: &EntityRef) -> Result<()> {
        Self::empty(self.delete(caller, &format!("/api/v1/secrets/{cred}/shares/{grantee}")))
    }
}
