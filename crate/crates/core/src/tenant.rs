//! Hierarchical tenant registry.
//!
//! Administrator tenants wait for an operator decision; child tenants created
//! with an active parent's credentials are active immediately. Deactivation
//! is never copied down the tree: every authentication walks the ancestor
//! chain instead.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::error::{Error, ErrorCode, Result};
use crate::id::{IdKind, OpaqueId};
use crate::oauth;
use crate::secret::{constant_time_eq, generate_secret, SecretHash};
use crate::store::Txn;
use crate::{ClientCredentials, Tenet};

pub const MAX_DEPTH: usize = 4;

pub(crate) const TENANTS: &str = "tenants";
pub(crate) const TENANT_CLIENTS: &str = "tenant_clients";
const TENANT_CHILDREN: &str = "tenant_children";
pub(crate) const AUDIT: &str = "audit";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantProfile {
    pub name: String,
    pub contact_email: String,
    #[serde(default)]
    pub redirect_uris: Vec<String>,
    #[serde(default)]
    pub description: String,
}

impl TenantProfile {
    pub fn validate(&self) -> Result<()> {
        let name = self.name.trim();
        if name.is_empty() || self.name.chars().count() > 128 {
            return Err(Error::validation("name must be 1-128 characters"));
        }
        if !is_plausible_email(&self.contact_email) {
            return Err(Error::validation(format!(
                "invalid contact email {:?}",
                self.contact_email
            )));
        }
        for uri in &self.redirect_uris {
            validate_absolute_uri(uri)?;
        }
        if self.description.chars().count() > 4096 {
            return Err(Error::validation("description too long"));
        }
        Ok(())
    }
}

pub(crate) fn is_plausible_email(s: &str) -> bool {
    let Some((local, domain)) = s.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.is_empty()
        && !domain.contains('@')
        && !s.chars().any(char::is_whitespace)
        && s.len() <= 254
}

pub(crate) fn validate_absolute_uri(uri: &str) -> Result<url::Url> {
    let parsed = url::Url::parse(uri)
        .map_err(|_| Error::validation(format!("not an absolute URI: {uri:?}")))?;
    if !matches!(parsed.scheme(), "http" | "https") || parsed.host().is_none() {
        return Err(Error::validation(format!("not an absolute http(s) URI: {uri:?}")));
    }
    Ok(parsed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TenantKind {
    Admin,
    Child,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TenantStatus {
    Requested,
    Active,
    Denied,
    Deactivated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tenant {
    pub tenant_id: OpaqueId,
    pub parent_id: Option<OpaqueId>,
    pub kind: TenantKind,
    pub status: TenantStatus,
    pub profile: TenantProfile,
    pub created_at: Timestamp,
    pub decided_at: Option<Timestamp>,
    pub client_id: Option<OpaqueId>,
    /// Number of children ever created; orders `list_children`.
    #[serde(default)]
    pub children_created: u64,
}

/// Issued credentials. The plaintext secret exists only in this value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantCredentials {
    pub client_id: OpaqueId,
    pub client_secret: String,
    pub issued_at: Timestamp,
}

impl TenantCredentials {
    pub fn as_client(&self) -> ClientCredentials {
        ClientCredentials::new(self.client_id.to_string(), self.client_secret.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct StoredClient {
    pub tenant_id: OpaqueId,
    pub secret: SecretHash,
    pub issued_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantContext {
    pub tenant_id: OpaqueId,
    pub kind: TenantKind,
    pub status: TenantStatus,
    /// Root-first, ending with this tenant.
    pub ancestor_path: Vec<OpaqueId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Approve,
    Deny,
}

pub enum DeactivationAuthority {
    Operator(String),
    Parent(ClientCredentials),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub ts: Timestamp,
    pub actor: String,
    pub action: String,
    pub tenant_id: Option<OpaqueId>,
    pub outcome: String,
}

pub(crate) fn audit(
    txn: &mut Txn,
    ts: Timestamp,
    actor: &str,
    action: &str,
    tenant_id: Option<&OpaqueId>,
    outcome: &str,
) -> Result<()> {
    let key = format!("{ts:012}/{:020}", next_audit_seq());
    txn.put(
        AUDIT,
        &key,
        &AuditRecord {
            ts,
            actor: actor.to_string(),
            action: action.to_string(),
            tenant_id: tenant_id.cloned(),
            outcome: outcome.to_string(),
        },
    )
}

/// Orders audit records written within the same second.
fn next_audit_seq() -> u64 {
    static SEQ: OnceLock<AtomicU64> = OnceLock::new();
    SEQ.get_or_init(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64);
        AtomicU64::new(nanos)
    })
    .fetch_add(1, Ordering::Relaxed)
}

pub(crate) fn load_tenant(txn: &mut Txn, tenant_id: &OpaqueId) -> Result<Tenant> {
    txn.get(TENANTS, &tenant_id.to_string())?
        .ok_or_else(|| Error::not_found(format!("tenant {tenant_id} not found")))
}

/// Root-first chain ending at `tenant_id`.
pub(crate) fn ancestor_chain(txn: &mut Txn, tenant_id: &OpaqueId) -> Result<Vec<Tenant>> {
    let mut chain = vec![load_tenant(txn, tenant_id)?];
    while let Some(parent) = chain.last().unwrap().parent_id.clone() {
        if chain.len() > MAX_DEPTH {
            return Err(Error::internal(format!("tenant {tenant_id} exceeds maximum depth")));
        }
        chain.push(load_tenant(txn, &parent)?);
    }
    chain.reverse();
    Ok(chain)
}

/// Fails with TENANT_INACTIVE unless every tenant on the chain is ACTIVE.
pub(crate) fn require_active_chain(txn: &mut Txn, tenant_id: &OpaqueId) -> Result<Vec<Tenant>> {
    let chain = ancestor_chain(txn, tenant_id)?;
    if let Some(t) = chain.iter().find(|t| t.status != TenantStatus::Active) {
        return Err(Error::tenant_inactive(format!(
            "tenant {} is {:?}",
            t.tenant_id, t.status
        )));
    }
    Ok(chain)
}

pub(crate) fn authenticate_in(txn: &mut Txn, creds: &ClientCredentials) -> Result<TenantContext> {
    let bad = || Error::invalid_client("unknown client or bad secret");
    let client_id = OpaqueId::parse_kind(&creds.client_id, IdKind::Client).map_err(|_| bad())?;
    let stored: StoredClient = txn
        .get(TENANT_CLIENTS, &client_id.to_string())?
        .ok_or_else(bad)?;
    if !stored.secret.verify(&creds.client_secret) {
        return Err(bad());
    }
    let chain = require_active_chain(txn, &stored.tenant_id)?;
    let me = chain.last().unwrap();
    Ok(TenantContext {
        tenant_id: me.tenant_id.clone(),
        kind: me.kind,
        status: me.status,
        ancestor_path: chain.iter().map(|t| t.tenant_id.clone()).collect(),
    })
}

fn issue_credentials(
    txn: &mut Txn,
    tenant: &mut Tenant,
    now: Timestamp,
) -> Result<TenantCredentials> {
    let client_id = tenant
        .client_id
        .clone()
        .unwrap_or_else(|| OpaqueId::generate(IdKind::Client));
    let secret = generate_secret();
    txn.put(
        TENANT_CLIENTS,
        &client_id.to_string(),
        &StoredClient {
            tenant_id: tenant.tenant_id.clone(),
            secret: SecretHash::new(&secret),
            issued_at: now,
        },
    )?;
    tenant.client_id = Some(client_id.clone());
    Ok(TenantCredentials {
        client_id,
        client_secret: secret,
        issued_at: now,
    })
}

impl Tenet {
    pub fn check_operator(&self, key: &str) -> Result<()> {
        if key.is_empty() || !constant_time_eq(key, &self.operator_key) {
            return Err(Error::access_denied("operator authority required"));
        }
        Ok(())
    }

    pub fn request_admin_tenant(&self, profile: TenantProfile) -> Result<OpaqueId> {
        profile.validate()?;
        let now = self.now();
        self.store.transact(|txn| {
            let tenant = Tenant {
                tenant_id: OpaqueId::generate(IdKind::Tenant),
                parent_id: None,
                kind: TenantKind::Admin,
                status: TenantStatus::Requested,
                profile: profile.clone(),
                created_at: now,
                decided_at: None,
                client_id: None,
                children_created: 0,
            };
            txn.put(TENANTS, &tenant.tenant_id.to_string(), &tenant)?;
            audit(txn, now, "anonymous", "request_admin_tenant", Some(&tenant.tenant_id), "ok")?;
            Ok(tenant.tenant_id)
        })
    }

    pub fn decide_tenant_request(
        &self,
        operator_key: &str,
        tenant_id: &OpaqueId,
        decision: Decision,
    ) -> Result<Option<TenantCredentials>> {
        let now = self.now();
        let action = match decision {
            Decision::Approve => "approve_tenant",
            Decision::Deny => "deny_tenant",
        };
        let result = self.store.transact(|txn| {
            let mut tenant = load_tenant(txn, tenant_id)?;
            self.check_operator(operator_key)?;
            if tenant.status != TenantStatus::Requested {
                return Err(Error::conflict(format!(
                    "tenant {tenant_id} already decided ({:?})",
                    tenant.status
                )));
            }
            tenant.decided_at = Some(now);
            let creds = match decision {
                Decision::Approve => {
                    tenant.status = TenantStatus::Active;
                    let creds = issue_credentials(txn, &mut tenant, now)?;
                    oauth::provision_default_clients(txn, &tenant.tenant_id)?;
                    Some(creds)
                }
                Decision::Deny => {
                    tenant.status = TenantStatus::Denied;
                    None
                }
            };
            txn.put(TENANTS, &tenant_id.to_string(), &tenant)?;
            audit(txn, now, "operator", action, Some(tenant_id), "ok")?;
            Ok(creds)
        });
        self.audit_failure(&result, now, "operator", action, Some(tenant_id));
        result
    }

    pub fn create_child_tenant(
        &self,
        parent: &ClientCredentials,
        profile: TenantProfile,
    ) -> Result<(OpaqueId, TenantCredentials)> {
        let now = self.now();
        let actor = format!("client:{}", parent.client_id);
        let result = self.store.transact(|txn| {
            let ctx = authenticate_in(txn, parent)?;
            profile.validate()?;
            if ctx.ancestor_path.len() + 1 > MAX_DEPTH {
                return Err(Error::validation(format!(
                    "tenant hierarchy depth limit of {MAX_DEPTH} reached"
                )));
            }
            let mut parent_tenant = load_tenant(txn, &ctx.tenant_id)?;
            let ordinal = parent_tenant.children_created;
            parent_tenant.children_created += 1;
            txn.put(TENANTS, &ctx.tenant_id.to_string(), &parent_tenant)?;

            let mut child = Tenant {
                tenant_id: OpaqueId::generate(IdKind::Tenant),
                parent_id: Some(ctx.tenant_id.clone()),
                kind: TenantKind::Child,
                status: TenantStatus::Active,
                profile: profile.clone(),
                created_at: now,
                decided_at: Some(now),
                client_id: None,
                children_created: 0,
            };
            let creds = issue_credentials(txn, &mut child, now)?;
            oauth::provision_default_clients(txn, &child.tenant_id)?;
            txn.put(TENANTS, &child.tenant_id.to_string(), &child)?;
            txn.put(
                TENANT_CHILDREN,
                &format!("{}/{ordinal:08}", ctx.tenant_id),
                &child.tenant_id,
            )?;
            audit(txn, now, &actor, "create_child_tenant", Some(&child.tenant_id), "ok")?;
            Ok((child.tenant_id.clone(), creds))
        });
        self.audit_failure(&result, now, &actor, "create_child_tenant", None);
        result
    }

    pub fn authenticate_client(&self, creds: &ClientCredentials) -> Result<TenantContext> {
        self.store.read(|txn| authenticate_in(txn, creds))
    }

    pub fn rotate_credentials(
        &self,
        current: &ClientCredentials,
        tenant_id: &OpaqueId,
    ) -> Result<TenantCredentials> {
        let now = self.now();
        self.store.transact(|txn| {
            let mut tenant = load_tenant(txn, tenant_id)?;
            let ctx = authenticate_in(txn, current)?;
            if ctx.tenant_id != *tenant_id {
                return Err(Error::invalid_client("credentials do not belong to this tenant"));
            }
            let creds = issue_credentials(txn, &mut tenant, now)?;
            txn.put(TENANTS, &tenant_id.to_string(), &tenant)?;
            audit(txn, now, &format!("client:{}", current.client_id), "rotate_credentials", Some(tenant_id), "ok")?;
            Ok(creds)
        })
    }

    pub fn deactivate_tenant(
        &self,
        authority: &DeactivationAuthority,
        tenant_id: &OpaqueId,
    ) -> Result<Tenant> {
        let now = self.now();
        let actor = match authority {
            DeactivationAuthority::Operator(_) => "operator".to_string(),
            DeactivationAuthority::Parent(c) => format!("client:{}", c.client_id),
        };
        let result = self.store.transact(|txn| {
            let mut tenant = load_tenant(txn, tenant_id)?;
            match authority {
                DeactivationAuthority::Operator(key) => self.check_operator(key)?,
                DeactivationAuthority::Parent(creds) => {
                    let ctx = authenticate_in(txn, creds).map_err(|e| match e.code {
                        ErrorCode::InvalidClient => e,
                        _ => Error::access_denied(e.message),
                    })?;
                    if tenant.parent_id.as_ref() != Some(&ctx.tenant_id) {
                        return Err(Error::access_denied(
                            "only the operator or the direct parent may deactivate a tenant",
                        ));
                    }
                }
            }
            if tenant.status != TenantStatus::Active {
                return Err(Error::conflict(format!(
                    "tenant {tenant_id} is {:?}, not ACTIVE",
                    tenant.status
                )));
            }
            tenant.status = TenantStatus::Deactivated;
            tenant.decided_at = Some(now);
            txn.put(TENANTS, &tenant_id.to_string(), &tenant)?;
            audit(txn, now, &actor, "deactivate_tenant", Some(tenant_id), "ok")?;
            Ok(tenant)
        });
        self.audit_failure(&result, now, &actor, "deactivate_tenant", Some(tenant_id));
        result
    }

    pub fn get_tenant(&self, tenant_id: &OpaqueId) -> Result<Tenant> {
        self.store.read(|txn| load_tenant(txn, tenant_id))
    }

    /// Direct children in creation order.
    pub fn list_children(&self, tenant_id: &OpaqueId) -> Result<Vec<Tenant>> {
        self.store.read(|txn| {
            load_tenant(txn, tenant_id)?;
            let ids: Vec<(String, OpaqueId)> =
                txn.scan(TENANT_CHILDREN, &format!("{tenant_id}/"))?;
            ids.into_iter().map(|(_, id)| load_tenant(txn, &id)).collect()
        })
    }

    /// Operator view of all tenants, optionally filtered by status.
    pub fn list_tenants(&self, operator_key: &str, status: Option<TenantStatus>) -> Result<Vec<Tenant>> {
        self.check_operator(operator_key)?;
        self.store.read(|txn| {
            let mut all: Vec<Tenant> = txn
                .scan::<Tenant>(TENANTS, "")?
                .into_iter()
                .map(|(_, t)| t)
                .filter(|t| status.is_none_or(|s| t.status == s))
                .collect();
            all.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.tenant_id.cmp(&b.tenant_id)));
            Ok(all)
        })
    }

    pub fn audit_log(&self) -> Result<Vec<AuditRecord>> {
        self.store.read(|txn| {
            Ok(txn
                .scan::<AuditRecord>(AUDIT, "")?
                .into_iter()
                .map(|(_, r)| r)
                .collect())
        })
    }

    fn audit_failure<T>(
        &self,
        result: &Result<T>,
        now: Timestamp,
        actor: &str,
        action: &str,
        tenant_id: Option<&OpaqueId>,
    ) {
        if let Err(e) = result {
            if e.code == ErrorCode::Internal {
                return;
            }
            let outcome = e.code.as_str();
            if let Err(err) = self
                .store
                .transact(|txn| audit(txn, now, actor, action, tenant_id, outcome))
            {
                tracing::warn!(%err, "could not record audit entry");
            }
        }
    }
}
