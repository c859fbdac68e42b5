//! Federated login broker.
//!
//! A tenant registers external IdPs under aliases and maps institution
//! entity ids onto them. `begin_login` picks an IdP and opens a short-lived
//! session; the IdP calls back with a code, which the broker exchanges for
//! the user's identity, links to a local user and finally turns into tenant
//! tokens. Local accounts are keyed on (institution, external subject) so
//! one person arriving through two IdPs ends up as one user.

use serde::{Deserialize, Serialize};
use url::Url;

use crate::clock::Timestamp;
use crate::error::{Error, ErrorCode, Result};
use crate::id::{EntityRef, IdKind, OpaqueId};
use crate::mockidp::{IdpIdClaims, IdpTokens};
use crate::secret::{constant_time_eq, generate_secret};
use crate::store::Txn;
use crate::tenant::{authenticate_in, load_tenant, require_active_chain, validate_absolute_uri};
use crate::token::{GrantType, TokenCodec, TokenResponse};
use crate::users::{self, ExternalIdentity, UserRecord};
use crate::{ClientCredentials, Tenet};

pub const SESSION_TTL_S: u64 = 600;
pub const LOGIN_CODE_TTL_S: u64 = 120;

const IDPS: &str = "idps";
const INSTITUTIONS: &str = "institutions";
const SESSIONS: &str = "auth_sessions";
const LINKS: &str = "identity_links";
const LOGIN_CODES: &str = "login_codes";

fn default_entity_param() -> String {
    "idphint".to_string()
}

/// What a tenant submits to register an IdP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewIdp {
    pub alias: String,
    pub authorize_endpoint: String,
    pub token_endpoint: String,
    pub broker_client_id: String,
    pub broker_client_secret: String,
    #[serde(default = "default_entity_param")]
    pub entity_id_param: String,
}

/// A registered IdP as shown to its tenant. The broker secret stays sealed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdpRegistration {
    pub tenant_id: OpaqueId,
    pub alias: String,
    pub authorize_endpoint: String,
    pub token_endpoint: String,
    pub broker_client_id: String,
    pub entity_id_param: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct StoredIdp {
    #[serde(flatten)]
    pub registration: IdpRegistration,
    sealed_secret: String,
    secret_nonce: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstitutionMapping {
    pub tenant_id: OpaqueId,
    pub entity_id: String,
    pub alias: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Pending,
    Consumed,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthSession {
    pub state: OpaqueId,
    pub tenant_id: OpaqueId,
    pub client_id: OpaqueId,
    pub redirect_uri: String,
    pub alias: String,
    pub entity_id: Option<String>,
    pub nonce: String,
    /// The tenant application's own state, echoed back on the redirect.
    pub state_in: Option<String>,
    pub created_at: Timestamp,
    pub expires_at: Timestamp,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizeRedirect {
    pub url: String,
    pub state: OpaqueId,
}

/// Everything needed to finish a login once its session is consumed.
#[derive(Clone)]
pub struct PendingLogin {
    pub session: AuthSession,
    pub token_endpoint: String,
    pub broker_client_id: String,
    pub broker_client_secret: String,
    pub callback_url: String,
}

impl std::fmt::Debug for PendingLogin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PendingLogin")
            .field("session", &self.session)
            .field("token_endpoint", &self.token_endpoint)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginResult {
    pub user_id: OpaqueId,
    #[serde(flatten)]
    pub tokens: TokenResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LoginCode {
    tenant_id: OpaqueId,
    client_id: OpaqueId,
    redirect_uri: String,
    user_id: OpaqueId,
    expires_at: Timestamp,
}

/// The code-for-token exchange at an external IdP.
pub trait IdpExchange {
    fn exchange(&self, pending: &PendingLogin, code: &str) -> Result<IdpTokens>;
}

/// Exchanges codes with the built-in mock IdP without going over HTTP.
pub struct InProcessExchange<'a>(pub &'a Tenet);

impl IdpExchange for InProcessExchange<'_> {
    fn exchange(&self, pending: &PendingLogin, code: &str) -> Result<IdpTokens> {
        self.0.mock_idp_token(
            code,
            &pending.broker_client_id,
            &pending.broker_client_secret,
            Some(&pending.callback_url),
        )
    }
}

fn validate_alias(alias: &str) -> Result<()> {
    let ok = !alias.is_empty()
        && alias.len() <= 64
        && alias.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_');
    if !ok {
        return Err(Error::validation(format!("invalid alias {alias:?}")));
    }
    Ok(())
}

/// Collision-free key for an (institution, subject) pair.
fn link_key(tenant_id: &OpaqueId, institution: &str, subject: &str) -> String {
    format!("{tenant_id}/{}:{institution}{subject}", institution.len())
}

fn load_idp(txn: &mut Txn, tenant_id: &OpaqueId, alias: &str) -> Result<Option<StoredIdp>> {
    txn.get(IDPS, &format!("{tenant_id}/{alias}"))
}

/// Hint first, then the institution mapping.
pub(crate) fn route(
    txn: &mut Txn,
    tenant_id: &OpaqueId,
    idp_hint: Option<&str>,
    entity_id: Option<&str>,
) -> Result<StoredIdp> {
    if let Some(hint) = idp_hint {
        if let Some(idp) = load_idp(txn, tenant_id, hint)? {
            return Ok(idp);
        }
    }
    if let Some(entity) = entity_id {
        let mapping: Option<InstitutionMapping> = txn.get(INSTITUTIONS, &format!("{tenant_id}/{entity}"))?;
        if let Some(m) = mapping {
            if let Some(idp) = load_idp(txn, tenant_id, &m.alias)? {
                return Ok(idp);
            }
        }
    }
    Err(Error::validation("no identity provider matches the hint or institution"))
}

fn username_for(txn: &mut Txn, tenant_id: &OpaqueId, claims: &IdpIdClaims) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .filter(|c| c.is_ascii_alphanumeric() || "._@+-".contains(*c))
            .take(100)
            .collect()
    };
    let mut base = clean(&claims.email);
    if base.is_empty() {
        base = clean(&claims.sub);
    }
    if base.is_empty() {
        base = "user".to_string();
    }
    if !users::username_taken(txn, tenant_id, &base) {
        return base;
    }
    (2u64..)
        .map(|n| format!("{base}-{n}"))
        .find(|candidate| !users::username_taken(txn, tenant_id, candidate))
        .expect("unbounded suffix search")
}

impl Tenet {
    pub fn register_idp(&self, tenant_creds: &ClientCredentials, idp: NewIdp) -> Result<IdpRegistration> {
        validate_alias(&idp.alias)?;
        validate_absolute_uri(&idp.authorize_endpoint)?;
        validate_absolute_uri(&idp.token_endpoint)?;
        if idp.broker_client_id.is_empty() || idp.broker_client_secret.is_empty() {
            return Err(Error::validation("broker client id and secret are required"));
        }
        if idp.entity_id_param.is_empty() {
            return Err(Error::validation("entity_id_param must not be empty"));
        }
        self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            let key = format!("{}/{}", ctx.tenant_id, idp.alias);
            if txn.exists(IDPS, &key) {
                return Err(Error::conflict(format!("alias {:?} is already registered", idp.alias)));
            }
            let registration = IdpRegistration {
                tenant_id: ctx.tenant_id.clone(),
                alias: idp.alias.clone(),
                authorize_endpoint: idp.authorize_endpoint.clone(),
                token_endpoint: idp.token_endpoint.clone(),
                broker_client_id: idp.broker_client_id.clone(),
                entity_id_param: idp.entity_id_param.clone(),
            };
            let (sealed_secret, secret_nonce) = self.seal(&key, idp.broker_client_secret.as_bytes())?;
            txn.put(
                IDPS,
                &key,
                &StoredIdp { registration: registration.clone(), sealed_secret, secret_nonce },
            )?;
            Ok(registration)
        })
    }

    pub fn list_idps(&self, tenant_creds: &ClientCredentials) -> Result<Vec<IdpRegistration>> {
        self.store.read(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            Ok(txn
                .scan::<StoredIdp>(IDPS, &format!("{}/", ctx.tenant_id))?
                .into_iter()
                .map(|(_, s)| s.registration)
                .collect())
        })
    }

    pub fn map_institution(&self, tenant_creds: &ClientCredentials, entity_id: &str, alias: &str) -> Result<()> {
        if entity_id.trim().is_empty() || entity_id.len() > 512 {
            return Err(Error::validation("entity_id must be 1-512 characters"));
        }
        self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            if load_idp(txn, &ctx.tenant_id, alias)?.is_none() {
                return Err(Error::not_found(format!("no identity provider with alias {alias:?}")));
            }
            txn.put(
                INSTITUTIONS,
                &format!("{}/{entity_id}", ctx.tenant_id),
                &InstitutionMapping {
                    tenant_id: ctx.tenant_id.clone(),
                    entity_id: entity_id.to_string(),
                    alias: alias.to_string(),
                },
            )
        })
    }

    pub fn list_institutions(&self, tenant_creds: &ClientCredentials) -> Result<Vec<InstitutionMapping>> {
        self.store.read(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            Ok(txn
                .scan::<InstitutionMapping>(INSTITUTIONS, &format!("{}/", ctx.tenant_id))?
                .into_iter()
                .map(|(_, m)| m)
                .collect())
        })
    }

    /// Which alias a login with these parameters would be sent to.
    pub fn resolve_idp(&self, tenant_id: &OpaqueId, idp_hint: Option<&str>, entity_id: Option<&str>) -> Result<String> {
        self.store.read(|txn| Ok(route(txn, tenant_id, idp_hint, entity_id)?.registration.alias))
    }

    pub fn begin_login(
        &self,
        client_id: &str,
        idp_hint: Option<&str>,
        entity_id: Option<&str>,
        redirect_uri: &str,
        state_in: Option<&str>,
    ) -> Result<AuthorizeRedirect> {
        let client_id = OpaqueId::parse_kind(client_id, IdKind::Client)
            .map_err(|_| Error::invalid_client(format!("unknown client {client_id}")))?;
        let now = self.now();
        self.store.transact(|txn| {
            let tenant_id = self.tenant_of_client(txn, &client_id)?;
            require_active_chain(txn, &tenant_id)?;
            let tenant = load_tenant(txn, &tenant_id)?;
            if !tenant.profile.redirect_uris.iter().any(|r| r == redirect_uri) {
                return Err(Error::access_denied("redirect_uri is not registered for this tenant"));
            }
            let idp = route(txn, &tenant_id, idp_hint, entity_id)?;
            let session = AuthSession {
                state: OpaqueId::generate(IdKind::Session),
                tenant_id: tenant_id.clone(),
                client_id: client_id.clone(),
                redirect_uri: redirect_uri.to_string(),
                alias: idp.registration.alias.clone(),
                entity_id: entity_id.map(str::to_string),
                nonce: generate_secret(),
                state_in: state_in.map(str::to_string),
                created_at: now,
                expires_at: now + SESSION_TTL_S,
                status: SessionStatus::Pending,
            };
            txn.put(SESSIONS, &session.state.to_string(), &session)?;

            let mut url = Url::parse(&idp.registration.authorize_endpoint)
                .map_err(|e| Error::internal(format!("stored endpoint unparseable: {e}")))?;
            {
                let mut q = url.query_pairs_mut();
                q.append_pair("response_type", "code")
                    .append_pair("client_id", &idp.registration.broker_client_id)
                    .append_pair("redirect_uri", &self.callback_url)
                    .append_pair("scope", "openid email")
                    .append_pair("state", &session.state.to_string())
                    .append_pair("nonce", &session.nonce);
                if let Some(entity) = entity_id {
                    q.append_pair(&idp.registration.entity_id_param, entity);
                }
            }
            Ok(AuthorizeRedirect { url: url.into(), state: session.state })
        })
    }

    /// Marks the session consumed and returns what the exchange needs.
    pub fn consume_session(&self, state: &str) -> Result<PendingLogin> {
        let state = OpaqueId::parse_kind(state, IdKind::Session)
            .map_err(|_| Error::not_found("unknown login session"))?;
        let now = self.now();
        self.store.transact(|txn| {
            let mut session: AuthSession = txn
                .get(SESSIONS, &state.to_string())?
                .ok_or_else(|| Error::not_found("unknown login session"))?;
            match session.status {
                SessionStatus::Consumed => return Err(Error::conflict("login session already used")),
                SessionStatus::Expired => return Err(Error::expired_token("login session expired")),
                SessionStatus::Pending if session.expires_at <= now => {
                    return Err(Error::expired_token("login session expired"))
                }
                SessionStatus::Pending => {}
            }
            let idp = load_idp(txn, &session.tenant_id, &session.alias)?
                .ok_or_else(|| Error::not_found("identity provider no longer registered"))?;
            let key = format!("{}/{}", session.tenant_id, session.alias);
            let secret = self.open(&key, &idp.sealed_secret, &idp.secret_nonce)?;
            session.status = SessionStatus::Consumed;
            txn.put(SESSIONS, &state.to_string(), &session)?;
            Ok(PendingLogin {
                session: session.clone(),
                token_endpoint: idp.registration.token_endpoint.clone(),
                broker_client_id: idp.registration.broker_client_id.clone(),
                broker_client_secret: String::from_utf8(secret)
                    .map_err(|_| Error::internal("broker secret is not UTF-8"))?,
                callback_url: self.callback_url.clone(),
            })
        })
    }

    /// Verifies the IdP's id_token and finds or creates the local user.
    pub fn finish_login(&self, pending: &PendingLogin, tokens: &IdpTokens) -> Result<OpaqueId> {
        let claims: IdpIdClaims = TokenCodec::new(pending.broker_client_secret.as_bytes())
            .verify(&tokens.id_token)
            .map_err(|_| Error::access_denied("identity provider response failed verification"))?;
        let now = self.now();
        if claims.aud != pending.broker_client_id || claims.exp <= now {
            return Err(Error::access_denied("identity provider response is stale or misaddressed"));
        }
        if claims.sub.is_empty() || claims.institution.is_empty() {
            return Err(Error::access_denied("identity provider response lacks a subject"));
        }
        let tenant_id = &pending.session.tenant_id;
        let identity = ExternalIdentity {
            alias: pending.session.alias.clone(),
            external_subject: claims.sub.clone(),
            email: claims.email.clone(),
            institution_entity_id: claims.institution.clone(),
            display_name: claims.name.clone(),
        };
        self.store.transact(|txn| {
            require_active_chain(txn, tenant_id)?;
            let key = link_key(tenant_id, &claims.institution, &claims.sub);
            let linked: Option<OpaqueId> = txn.get(LINKS, &key)?;
            let mut user = match linked {
                Some(id) => users::find_user(txn, &id)?
                    .ok_or_else(|| Error::internal(format!("identity link to missing user {id}")))?,
                None => {
                    let user = UserRecord {
                        user_id: OpaqueId::generate(IdKind::User),
                        tenant_id: tenant_id.clone(),
                        username: username_for(txn, tenant_id, &claims),
                        email: claims.email.clone(),
                        enabled: true,
                        attributes: Default::default(),
                        external_identities: Vec::new(),
                    };
                    users::insert_user(txn, &user)?;
                    txn.put(LINKS, &key, &user.user_id)?;
                    user
                }
            };
            if !user.enabled {
                return Err(Error::access_denied(format!("user {} is disabled", user.user_id)));
            }
            let known = user
                .external_identities
                .iter()
                .any(|e| e.alias == identity.alias && e.external_subject == identity.external_subject);
            if !known {
                user.external_identities.push(identity.clone());
                users::save_user(txn, &user)?;
            }
            Ok(user.user_id)
        })
    }

    /// Issues the user's tenant tokens for a finished login.
    fn issue_login_tokens(&self, tenant_id: &OpaqueId, user_id: &OpaqueId) -> Result<LoginResult> {
        self.store.transact(|txn| {
            require_active_chain(txn, tenant_id)?;
            let principal = EntityRef::user(tenant_id, user_id);
            crate::oauth::require_live_principal(txn, &principal)?;
            let tokens = self.issue_in(txn, &principal, GrantType::AuthorizationCode)?;
            Ok(LoginResult { user_id: user_id.clone(), tokens })
        })
    }

    /// The whole callback in one call: consume, exchange, link, issue.
    pub fn complete_login(&self, state: &str, code: &str, exchange: &dyn IdpExchange) -> Result<LoginResult> {
        let pending = self.consume_session(state)?;
        let idp_tokens = exchange.exchange(&pending, code)?;
        let user_id = self.finish_login(&pending, &idp_tokens)?;
        self.issue_login_tokens(&pending.session.tenant_id, &user_id)
    }

    /// For the HTTP flow: a single-use code the tenant application redeems
    /// at the token endpoint. Returns the URL to send the browser to.
    pub fn mint_login_code(&self, pending: &PendingLogin, user_id: &OpaqueId) -> Result<String> {
        let code = OpaqueId::generate(IdKind::Code);
        let now = self.now();
        self.store.transact(|txn| {
            txn.put(
                LOGIN_CODES,
                &code.to_string(),
                &LoginCode {
                    tenant_id: pending.session.tenant_id.clone(),
                    client_id: pending.session.client_id.clone(),
                    redirect_uri: pending.session.redirect_uri.clone(),
                    user_id: user_id.clone(),
                    expires_at: now + LOGIN_CODE_TTL_S,
                },
            )
        })?;
        let mut url = Url::parse(&pending.session.redirect_uri)
            .map_err(|e| Error::internal(format!("stored redirect_uri unparseable: {e}")))?;
        url.query_pairs_mut().append_pair("code", &code.to_string());
        if let Some(s) = &pending.session.state_in {
            url.query_pairs_mut().append_pair("state", s);
        }
        Ok(url.into())
    }

    /// Where to send the browser when the login failed after the session
    /// was consumed: back to the application, carrying the error.
    pub fn login_error_redirect(&self, pending: &PendingLogin, code: ErrorCode) -> String {
        let mut url = match Url::parse(&pending.session.redirect_uri) {
            Ok(u) => u,
            Err(_) => return pending.session.redirect_uri.clone(),
        };
        url.query_pairs_mut().append_pair("error", code.as_str());
        if let Some(s) = &pending.session.state_in {
            url.query_pairs_mut().append_pair("state", s);
        }
        url.into()
    }

    pub fn redeem_login_code(
        &self,
        tenant_creds: &ClientCredentials,
        code: &str,
        redirect_uri: &str,
    ) -> Result<LoginResult> {
        let bad = || Error::invalid_grant("unknown, expired or already used authorization code");
        let code = OpaqueId::parse_kind(code, IdKind::Code).map_err(|_| bad())?;
        let now = self.now();
        let (tenant_id, user_id) = self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            let stored: LoginCode = txn.get(LOGIN_CODES, &code.to_string())?.ok_or_else(bad)?;
            // burn it whatever happens next
            txn.delete(LOGIN_CODES, &code.to_string());
            let client_ok = stored.client_id.to_string() == tenant_creds.client_id && stored.tenant_id == ctx.tenant_id;
            if !client_ok || stored.expires_at <= now || stored.redirect_uri != redirect_uri {
                return Ok(None);
            }
            Ok(Some((stored.tenant_id, stored.user_id)))
        })?
        .ok_or_else(bad)?;
        self.issue_login_tokens(&tenant_id, &user_id)
    }

    /// The mock IdP's token endpoint: broker credentials are checked against
    /// every registration that uses this broker client id.
    pub fn mock_idp_token(
        &self,
        code: &str,
        client_id: &str,
        client_secret: &str,
        redirect_uri: Option<&str>,
    ) -> Result<IdpTokens> {
        let secret_ok = self.store.read(|txn| {
            for (key, idp) in txn.scan::<StoredIdp>(IDPS, "")? {
                if idp.registration.broker_client_id != client_id {
                    continue;
                }
                let secret = self.open(&key, &idp.sealed_secret, &idp.secret_nonce)?;
                if constant_time_eq(&String::from_utf8_lossy(&secret), client_secret) {
                    return Ok(true);
                }
            }
            Ok(false)
        })?;
        self.mock_idp.redeem(code, client_id, redirect_uri, client_secret, secret_ok)
    }
}
