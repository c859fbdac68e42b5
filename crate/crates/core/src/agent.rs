//! Agents: restricted principals that may do exactly one thing, fetch
//! credentials that were shared with them or with their tenant.
//!
//! The three retrieval schemes (agent, delegated tenant, end user) all end in
//! the vault's access check and differ only in who is authenticated.

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::error::{Error, Result};
use crate::id::{EntityKind, EntityRef, IdKind, OpaqueId};
use crate::secret::{generate_secret, SecretHash};
use crate::store::Txn;
use crate::tenant::{authenticate_in as authenticate_tenant, require_active_chain};
use crate::token::{TokenResponse, TokenType};
use crate::vault::FetchedCredential;
use crate::{ClientCredentials, Tenet};

pub const AGENT_SCOPE: &str = "credential.fetch";

const AGENTS: &str = "agents";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentStatus {
    Active,
    Deleted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct StoredAgent {
    pub agent_id: OpaqueId,
    pub tenant_id: OpaqueId,
    pub secret: SecretHash,
    pub status: AgentStatus,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRegistration {
    pub agent_id: OpaqueId,
    pub tenant_id: OpaqueId,
    pub status: AgentStatus,
    pub scopes: Vec<String>,
    pub created_at: Timestamp,
}

impl From<StoredAgent> for AgentRegistration {
    fn from(a: StoredAgent) -> Self {
        AgentRegistration {
            agent_id: a.agent_id,
            tenant_id: a.tenant_id,
            status: a.status,
            scopes: vec![AGENT_SCOPE.to_string()],
            created_at: a.created_at,
        }
    }
}

pub(crate) fn find_agent(txn: &mut Txn, agent_id: &OpaqueId) -> Result<Option<StoredAgent>> {
    txn.get(AGENTS, &agent_id.to_string())
}

pub(crate) fn authenticate_in(txn: &mut Txn, agent_id: &OpaqueId, secret: &str) -> Result<EntityRef> {
    let bad = || Error::invalid_client("unknown client or bad secret");
    let agent = find_agent(txn, agent_id)?.ok_or_else(bad)?;
    if agent.status != AgentStatus::Active || !agent.secret.verify(secret) {
        return Err(bad());
    }
    require_active_chain(txn, &agent.tenant_id)?;
    Ok(EntityRef::agent(&agent.tenant_id, agent_id))
}

impl Tenet {
    pub fn register_agent(&self, tenant_creds: &ClientCredentials) -> Result<(OpaqueId, String)> {
        let now = self.now();
        self.store.transact(|txn| {
            let ctx = authenticate_tenant(txn, tenant_creds)?;
            let secret = generate_secret();
            let agent = StoredAgent {
                agent_id: OpaqueId::generate(IdKind::Agent),
                tenant_id: ctx.tenant_id,
                secret: SecretHash::new(&secret),
                status: AgentStatus::Active,
                created_at: now,
            };
            txn.put(AGENTS, &agent.agent_id.to_string(), &agent)?;
            Ok((agent.agent_id, secret))
        })
    }

    pub fn delete_agent(&self, tenant_creds: &ClientCredentials, agent_id: &OpaqueId) -> Result<()> {
        self.store.transact(|txn| {
            let ctx = authenticate_tenant(txn, tenant_creds)?;
            let mut agent = match find_agent(txn, agent_id)? {
                Some(a) if a.tenant_id == ctx.tenant_id && a.status == AgentStatus::Active => a,
                _ => return Err(Error::not_found(format!("agent {agent_id} not found"))),
            };
            agent.status = AgentStatus::Deleted;
            txn.put(AGENTS, &agent_id.to_string(), &agent)
        })
    }

    pub fn list_agents(&self, tenant_creds: &ClientCredentials) -> Result<Vec<AgentRegistration>> {
        self.store.read(|txn| {
            let ctx = authenticate_tenant(txn, tenant_creds)?;
            Ok(txn
                .scan::<StoredAgent>(AGENTS, "")?
                .into_iter()
                .map(|(_, a)| a)
                .filter(|a| a.tenant_id == ctx.tenant_id && a.status == AgentStatus::Active)
                .map(Into::into)
                .collect())
        })
    }

    pub fn agent_login(&self, agent_id: &str, secret: &str) -> Result<TokenResponse> {
        if OpaqueId::parse_kind(agent_id, IdKind::Agent).is_err() {
            return Err(Error::invalid_client("unknown client or bad secret"));
        }
        self.grant_client_credentials(&ClientCredentials::new(agent_id, secret))
    }

    /// Agent scheme: the agent authenticates with its own token.
    pub fn fetch_as_agent(&self, agent_token: &str, credential: &OpaqueId) -> Result<FetchedCredential> {
        self.store.read(|txn| {
            let claims = self.validate_in(txn, agent_token, None, Some(TokenType::Agent))?;
            self.fetch_in(txn, &claims.sub, credential)
        })
    }

    /// Delegated scheme: a trusted middleware tenant fetches on a user's
    /// behalf using its own client credentials.
    pub fn fetch_delegated(&self, middleware: &ClientCredentials, credential: &OpaqueId) -> Result<FetchedCredential> {
        self.store.read(|txn| {
            let ctx = authenticate_tenant(txn, middleware)?;
            self.fetch_in(txn, &EntityRef::tenant(&ctx.tenant_id), credential)
        })
    }

    /// User scheme: the end user's access token is passed through opaquely
    /// and only that user is evaluated.
    pub fn fetch_as_user(&self, user_token: &str, credential: &OpaqueId) -> Result<FetchedCredential> {
        self.store.read(|txn| {
            let claims = self.validate_in(txn, user_token, None, Some(TokenType::Access))?;
            if claims.sub.kind != EntityKind::User {
                return Err(Error::access_denied("a user access token is required"));
            }
            self.fetch_in(txn, &claims.sub, credential)
        })
    }
}
