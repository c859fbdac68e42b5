//! Service accounts: client-credentials principals registered under a tenant,
//! typically one per external resource (the name carries the resource id).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::error::{Error, Result};
use crate::id::{EntityRef, IdKind, OpaqueId};
use crate::secret::{generate_secret, SecretHash};
use crate::store::Txn;
use crate::tenant::{authenticate_in as authenticate_tenant, require_active_chain};
use crate::{ClientCredentials, Tenet};

const ACCOUNTS: &str = "service_accounts";
const NAMES: &str = "sa_names";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccountStatus {
    Active,
    Deleted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct StoredAccount {
    pub account_id: OpaqueId,
    pub tenant_id: OpaqueId,
    pub name: String,
    pub roles: Vec<String>,
    pub attributes: BTreeMap<String, String>,
    pub secret: SecretHash,
    pub status: AccountStatus,
    pub created_at: Timestamp,
}

/// Outward view of an account. Carries no secret material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceAccount {
    pub account_id: OpaqueId,
    pub tenant_id: OpaqueId,
    pub name: String,
    pub roles: Vec<String>,
    pub attributes: BTreeMap<String, String>,
    pub status: AccountStatus,
    pub created_at: Timestamp,
}

impl From<StoredAccount> for ServiceAccount {
    fn from(s: StoredAccount) -> Self {
        ServiceAccount {
            account_id: s.account_id,
            tenant_id: s.tenant_id,
            name: s.name,
            roles: s.roles,
            attributes: s.attributes,
            status: s.status,
            created_at: s.created_at,
        }
    }
}

pub(crate) fn find_account(txn: &mut Txn, account_id: &OpaqueId) -> Result<Option<StoredAccount>> {
    txn.get(ACCOUNTS, &account_id.to_string())
}

fn load_in(txn: &mut Txn, tenant_id: &OpaqueId, account_id: &OpaqueId) -> Result<StoredAccount> {
    match find_account(txn, account_id)? {
        Some(a) if a.tenant_id == *tenant_id => Ok(a),
        _ => Err(Error::not_found(format!("service account {account_id} not found"))),
    }
}

/// Client-credentials check for a `svc-` client id.
pub(crate) fn authenticate_in(txn: &mut Txn, account_id: &OpaqueId, secret: &str) -> Result<EntityRef> {
    let bad = || Error::invalid_client("unknown client or bad secret");
    let account = find_account(txn, account_id)?.ok_or_else(bad)?;
    if account.status != AccountStatus::Active || !account.secret.verify(secret) {
        return Err(bad());
    }
    require_active_chain(txn, &account.tenant_id)?;
    Ok(EntityRef::service_account(&account.tenant_id, account_id))
}

impl Tenet {
    /// Returns the new account id and its secret. The secret is not stored.
    pub fn register_service_account(
        &self,
        tenant_creds: &ClientCredentials,
        name: &str,
        roles: Vec<String>,
        attributes: BTreeMap<String, String>,
    ) -> Result<(OpaqueId, String)> {
        let now = self.now();
        self.store.transact(|txn| {
            let ctx = authenticate_tenant(txn, tenant_creds)?;
            if name.trim().is_empty() || name.len() > 128 {
                return Err(Error::validation("service account name must be 1-128 characters"));
            }
            if roles.iter().any(|r| r.trim().is_empty()) {
                return Err(Error::validation("roles must be non-empty strings"));
            }
            let index = format!("{}/{name}", ctx.tenant_id);
            if txn.exists(NAMES, &index) {
                return Err(Error::conflict(format!("service account {name:?} already exists")));
            }
            let secret = generate_secret();
            let account = StoredAccount {
                account_id: OpaqueId::generate(IdKind::ServiceAccount),
                tenant_id: ctx.tenant_id.clone(),
                name: name.to_string(),
                roles: roles.clone(),
                attributes: attributes.clone(),
                secret: SecretHash::new(&secret),
                status: AccountStatus::Active,
                created_at: now,
            };
            txn.put(NAMES, &index, &account.account_id)?;
            txn.put(ACCOUNTS, &account.account_id.to_string(), &account)?;
            Ok((account.account_id, secret))
        })
    }

    pub fn delete_service_account(&self, tenant_creds: &ClientCredentials, account_id: &OpaqueId) -> Result<()> {
        self.store.transact(|txn| {
            let ctx = authenticate_tenant(txn, tenant_creds)?;
            let mut account = load_in(txn, &ctx.tenant_id, account_id)?;
            if account.status == AccountStatus::Deleted {
                return Err(Error::not_found(format!("service account {account_id} not found")));
            }
            account.status = AccountStatus::Deleted;
            txn.delete(NAMES, &format!("{}/{}", ctx.tenant_id, account.name));
            txn.put(ACCOUNTS, &account_id.to_string(), &account)
        })
    }

    pub fn get_service_account(&self, tenant_creds: &ClientCredentials, account_id: &OpaqueId) -> Result<ServiceAccount> {
        self.store.read(|txn| {
            let ctx = authenticate_tenant(txn, tenant_creds)?;
            load_in(txn, &ctx.tenant_id, account_id).map(Into::into)
        })
    }

    pub fn list_service_accounts(&self, tenant_creds: &ClientCredentials) -> Result<Vec<ServiceAccount>> {
        self.store.read(|txn| {
            let ctx = authenticate_tenant(txn, tenant_creds)?;
            let ids: Vec<(String, OpaqueId)> = txn.scan(NAMES, &format!("{}/", ctx.tenant_id))?;
            ids.into_iter()
                .map(|(_, id)| load_in(txn, &ctx.tenant_id, &id).map(Into::into))
                .collect()
        })
    }
}
