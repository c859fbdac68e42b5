//! Token issuance and validation: per-kind OAuth client configuration,
//! client-credentials and refresh grants, revocation and introspection.

use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentStatus};
use crate::clock::Timestamp;
use crate::error::{Error, Result};
use crate::id::{EntityKind, EntityRef, IdKind, OpaqueId};
use crate::service_account::{self, AccountStatus};
use crate::store::Txn;
use crate::tenant::{self, authenticate_in, require_active_chain};
use crate::token::{issuer_for, GrantType, TokenClaims, TokenResponse, TokenType};
use crate::users;
use crate::{ClientCredentials, Tenet};

pub const MIN_LIFETIME_S: u64 = 30;
pub const MAX_LIFETIME_S: u64 = 30 * 24 * 3600;
pub const DEFAULT_ACCESS_LIFETIME_S: u64 = 3600;
pub const DEFAULT_ID_LIFETIME_S: u64 = 3600;
pub const DEFAULT_REFRESH_LIFETIME_S: u64 = 14 * 24 * 3600;

const OAUTH_CLIENTS: &str = "oauth_clients";
const OAUTH_CLIENT_INDEX: &str = "oauth_client_index";
const REFRESH_TOKENS: &str = "refresh_tokens";
const REVOKED: &str = "revoked";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClientKind {
    UserLogin,
    ServiceAccount,
    Agent,
}

impl ClientKind {
    pub const ALL: [ClientKind; 3] = [ClientKind::UserLogin, ClientKind::ServiceAccount, ClientKind::Agent];

    fn tag(self) -> &'static str {
        match self {
            ClientKind::UserLogin => "USER_LOGIN",
            ClientKind::ServiceAccount => "SERVICE_ACCOUNT",
            ClientKind::Agent => "AGENT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifetimes {
    pub access_lifetime_s: u64,
    pub id_lifetime_s: u64,
    pub refresh_lifetime_s: u64,
}

impl Default for Lifetimes {
    fn default() -> Self {
        Lifetimes {
            access_lifetime_s: DEFAULT_ACCESS_LIFETIME_S,
            id_lifetime_s: DEFAULT_ID_LIFETIME_S,
            refresh_lifetime_s: DEFAULT_REFRESH_LIFETIME_S,
        }
    }
}

impl Lifetimes {
    fn validate(&self, kind: ClientKind) -> Result<()> {
        let mut checks = vec![
            ("access_lifetime_s", self.access_lifetime_s),
            ("id_lifetime_s", self.id_lifetime_s),
        ];
        if kind != ClientKind::Agent {
            checks.push(("refresh_lifetime_s", self.refresh_lifetime_s));
        }
        for (name, v) in checks {
            if !(MIN_LIFETIME_S..=MAX_LIFETIME_S).contains(&v) {
                return Err(Error::validation(format!(
                    "{name} must be between {MIN_LIFETIME_S} and {MAX_LIFETIME_S} seconds, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OAuthClientConfig {
    pub client_id: OpaqueId,
    pub tenant_id: OpaqueId,
    pub kind: ClientKind,
    #[serde(flatten)]
    pub lifetimes: Lifetimes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RefreshRecord {
    exp: Timestamp,
    consumed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RevokedRecord {
    exp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Introspection {
    pub active: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claims: Option<TokenClaims>,
}

fn index_key(tenant_id: &OpaqueId, kind: ClientKind) -> String {
    format!("{tenant_id}/{}", kind.tag())
}

/// Creates the per-kind clients a freshly activated tenant needs.
pub(crate) fn provision_default_clients(txn: &mut Txn, tenant_id: &OpaqueId) -> Result<()> {
    for kind in ClientKind::ALL {
        if txn.exists(OAUTH_CLIENT_INDEX, &index_key(tenant_id, kind)) {
            continue;
        }
        let config = OAuthClientConfig {
            client_id: OpaqueId::generate(IdKind::OAuthClient),
            tenant_id: tenant_id.clone(),
            kind,
            lifetimes: Lifetimes::default(),
        };
        txn.put(OAUTH_CLIENTS, &config.client_id.to_string(), &config)?;
        txn.put(OAUTH_CLIENT_INDEX, &index_key(tenant_id, kind), &config.client_id)?;
    }
    Ok(())
}

pub(crate) fn client_for(txn: &mut Txn, tenant_id: &OpaqueId, kind: ClientKind) -> Result<OAuthClientConfig> {
    let id: OpaqueId = txn
        .get(OAUTH_CLIENT_INDEX, &index_key(tenant_id, kind))?
        .ok_or_else(|| Error::internal(format!("tenant {tenant_id} has no {} client", kind.tag())))?;
    txn.get(OAUTH_CLIENTS, &id.to_string())?
        .ok_or_else(|| Error::internal(format!("dangling client index for {id}")))
}

/// Which client kind issues tokens for a principal.
fn kind_for(principal: &EntityRef) -> Result<ClientKind> {
    match principal.kind {
        EntityKind::Tenant | EntityKind::User => Ok(ClientKind::UserLogin),
        EntityKind::ServiceAccount => Ok(ClientKind::ServiceAccount),
        EntityKind::Agent => Ok(ClientKind::Agent),
        EntityKind::Group => Err(Error::validation("groups cannot hold tokens")),
    }
}

/// Fails with ACCESS_DENIED unless the subject still exists and is enabled.
pub(crate) fn require_live_principal(txn: &mut Txn, sub: &EntityRef) -> Result<()> {
    let gone = |what: &str| Error::access_denied(format!("{what} {} is no longer active", sub.local_id));
    match sub.kind {
        EntityKind::Tenant => Ok(()),
        EntityKind::User => match users::find_user(txn, &sub.local_id)? {
            Some(u) if u.tenant_id == sub.tenant_id && u.enabled => Ok(()),
            _ => Err(gone("user")),
        },
        EntityKind::ServiceAccount => match service_account::find_account(txn, &sub.local_id)? {
            Some(a) if a.tenant_id == sub.tenant_id && a.status == AccountStatus::Active => Ok(()),
            _ => Err(gone("service account")),
        },
        EntityKind::Agent => match agent::find_agent(txn, &sub.local_id)? {
            Some(a) if a.tenant_id == sub.tenant_id && a.status == AgentStatus::Active => Ok(()),
            _ => Err(gone("agent")),
        },
        EntityKind::Group => Err(Error::access_denied("groups cannot hold tokens")),
    }
}

fn roles_for(txn: &mut Txn, principal: &EntityRef) -> Result<Vec<String>> {
    match principal.kind {
        EntityKind::User => users::roles_for_user(txn, principal),
        EntityKind::ServiceAccount => Ok(service_account::find_account(txn, &principal.local_id)?
            .map(|a| a.roles)
            .unwrap_or_default()),
        EntityKind::Agent => Ok(vec![agent::AGENT_SCOPE.to_string()]),
        EntityKind::Tenant | EntityKind::Group => Ok(Vec::new()),
    }
}

impl Tenet {
    pub fn configure_client(
        &self,
        tenant_creds: &ClientCredentials,
        kind: ClientKind,
        lifetimes: Lifetimes,
    ) -> Result<OpaqueId> {
        self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            lifetimes.validate(kind)?;
            provision_default_clients(txn, &ctx.tenant_id)?;
            let mut config = client_for(txn, &ctx.tenant_id, kind)?;
            config.lifetimes = lifetimes;
            if kind == ClientKind::Agent {
                config.lifetimes.refresh_lifetime_s = 0;
            }
            txn.put(OAUTH_CLIENTS, &config.client_id.to_string(), &config)?;
            Ok(config.client_id)
        })
    }

    pub fn list_clients(&self, tenant_creds: &ClientCredentials) -> Result<Vec<OAuthClientConfig>> {
        self.store.read(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            ClientKind::ALL
                .into_iter()
                .map(|k| client_for(txn, &ctx.tenant_id, k))
                .collect()
        })
    }

    /// Mints the token set for `principal` inside an open transaction.
    pub(crate) fn issue_in(
        &self,
        txn: &mut Txn,
        principal: &EntityRef,
        amr: GrantType,
    ) -> Result<TokenResponse> {
        let now = self.now();
        let kind = kind_for(principal)?;
        let client = client_for(txn, &principal.tenant_id, kind)?;
        let roles = roles_for(txn, principal)?;
        let mint = |typ: TokenType, lifetime: u64| TokenClaims {
            iss: issuer_for(&principal.tenant_id),
            sub: principal.clone(),
            aud: client.client_id.to_string(),
            typ,
            iat: now,
            exp: now + lifetime,
            jti: OpaqueId::generate(IdKind::TokenId),
            roles: roles.clone(),
            amr,
        };

        let access_typ = if kind == ClientKind::Agent { TokenType::Agent } else { TokenType::Access };
        let access = mint(access_typ, client.lifetimes.access_lifetime_s);
        let with_id = kind == ClientKind::ServiceAccount || principal.kind == EntityKind::User;
        let id_token = with_id.then(|| self.codec.sign(&mint(TokenType::Id, client.lifetimes.id_lifetime_s)));
        let refresh_token = if kind == ClientKind::Agent {
            None
        } else {
            let refresh = mint(TokenType::Refresh, client.lifetimes.refresh_lifetime_s);
            txn.put(
                REFRESH_TOKENS,
                &refresh.jti.to_string(),
                &RefreshRecord { exp: refresh.exp, consumed: false },
            )?;
            Some(self.codec.sign(&refresh))
        };
        Ok(TokenResponse {
            expires_in: access.exp - now,
            access_token: self.codec.sign(&access),
            id_token,
            refresh_token,
            token_type: "Bearer".to_string(),
        })
    }

    /// Client-credentials grant for tenants (`cli-`), service accounts
    /// (`svc-`) and agents (`agt-`).
    pub fn grant_client_credentials(&self, creds: &ClientCredentials) -> Result<TokenResponse> {
        let bad = || Error::invalid_client("unknown client or bad secret");
        let id = OpaqueId::parse(&creds.client_id).map_err(|_| bad())?;
        self.store.transact(|txn| {
            let principal = match id.kind() {
                IdKind::Client => {
                    let ctx = authenticate_in(txn, creds)?;
                    EntityRef::tenant(&ctx.tenant_id)
                }
                IdKind::ServiceAccount => service_account::authenticate_in(txn, &id, &creds.client_secret)?,
                IdKind::Agent => agent::authenticate_in(txn, &id, &creds.client_secret)?,
                _ => return Err(bad()),
            };
            self.issue_in(txn, &principal, GrantType::ClientCredentials)
        })
    }

    pub fn grant_refresh(&self, refresh_token: &str) -> Result<TokenResponse> {
        let now = self.now();
        self.store.transact(|txn| {
            let claims = self.validate_in(txn, refresh_token, None, Some(TokenType::Refresh))?;
            let key = claims.jti.to_string();
            let record: Option<RefreshRecord> = txn.get(REFRESH_TOKENS, &key)?;
            match record {
                Some(r) if !r.consumed => {}
                _ => return Err(Error::access_denied("refresh token already used or unknown")),
            }
            txn.put(REFRESH_TOKENS, &key, &RefreshRecord { exp: claims.exp, consumed: true })?;
            txn.put(REVOKED, &key, &RevokedRecord { exp: claims.exp.max(now) })?;
            self.issue_in(txn, &claims.sub, GrantType::RefreshToken)
        })
    }

    pub(crate) fn validate_in(
        &self,
        txn: &mut Txn,
        token: &str,
        expected_aud: Option<&str>,
        expected_typ: Option<TokenType>,
    ) -> Result<TokenClaims> {
        let claims: TokenClaims = self.codec.verify(token)?;
        if claims.iss != issuer_for(&claims.sub.tenant_id) || claims.exp <= claims.iat {
            return Err(Error::invalid_token("inconsistent token claims"));
        }
        if claims.exp <= self.now() {
            return Err(Error::expired_token("token has expired"));
        }
        if txn.exists(REVOKED, &claims.jti.to_string()) {
            return Err(Error::access_denied("token has been revoked"));
        }
        require_active_chain(txn, &claims.sub.tenant_id)?;
        require_live_principal(txn, &claims.sub)?;
        if let Some(aud) = expected_aud {
            if claims.aud != aud {
                return Err(Error::access_denied("token audience mismatch"));
            }
        }
        if let Some(typ) = expected_typ {
            if claims.typ != typ {
                return Err(Error::access_denied(format!(
                    "expected a {typ:?} token, got {:?}",
                    claims.typ
                )));
            }
        }
        Ok(claims)
    }

    pub fn validate(
        &self,
        token: &str,
        expected_aud: Option<&str>,
        expected_typ: Option<TokenType>,
    ) -> Result<TokenClaims> {
        self.store.read(|txn| self.validate_in(txn, token, expected_aud, expected_typ))
    }

    /// Revokes a token (by value) or a bare jti. Unknown input is a no-op.
    pub fn revoke(&self, token_or_jti: &str) -> Result<()> {
        let now = self.now();
        let target = if token_or_jti.contains('.') {
            match self.codec.verify::<TokenClaims>(token_or_jti) {
                Ok(c) => Some((c.jti, c.exp)),
                Err(_) => None,
            }
        } else {
            OpaqueId::parse_kind(token_or_jti, IdKind::TokenId)
                .ok()
                .map(|jti| (jti, now + MAX_LIFETIME_S))
        };
        let Some((jti, exp)) = target else {
            return Ok(());
        };
        self.store.transact(|txn| {
            // expired entries can no longer match a valid token
            for (key, r) in txn.scan::<RevokedRecord>(REVOKED, "")? {
                if r.exp < now {
                    txn.delete(REVOKED, &key);
                }
            }
            if exp >= now {
                txn.put(REVOKED, &jti.to_string(), &RevokedRecord { exp })?;
            }
            Ok(())
        })
    }

    pub fn introspect(&self, token: &str) -> Introspection {
        match self.validate(token, None, None) {
            Ok(claims) => Introspection { active: true, claims: Some(claims) },
            Err(_) => Introspection { active: false, claims: None },
        }
    }

    pub(crate) fn tenant_of_client(&self, txn: &mut Txn, client_id: &OpaqueId) -> Result<OpaqueId> {
        let stored: Option<tenant::StoredClient> = txn.get(tenant::TENANT_CLIENTS, &client_id.to_string())?;
        stored
            .map(|s| s.tenant_id)
            .ok_or_else(|| Error::invalid_client(format!("unknown client {client_id}")))
    }
}
