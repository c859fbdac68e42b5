//! Encrypted resource-credential vault with a sharing ACL.
//!
//! Payloads are sealed with AES-256-GCM under the configured master key, a
//! fresh 96-bit nonce per encryption, and the credential token as associated
//! data so ciphertexts cannot be swapped between records.

use std::collections::BTreeMap;

use aes_gcm::aead::{Aead, Payload as AeadPayload};
use aes_gcm::Nonce;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::error::{Error, Result};
use crate::id::{EntityKind, EntityRef, IdKind, OpaqueId};
use crate::store::Txn;
use crate::tenant::{self, authenticate_in as authenticate_tenant};
use crate::token::TokenType;
use crate::{agent, service_account, users, ClientCredentials, Tenet};

pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024;

const CREDENTIALS: &str = "credentials";
const SHARES: &str = "shares";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CredentialType {
    SshKey,
    Password,
    ApiToken,
    KvSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Permission {
    Read,
    Write,
    Owner,
}

/// Who is calling a vault operation, before authentication.
#[derive(Debug, Clone, Copy)]
pub enum Caller<'a> {
    /// Any token from the token engine (user, service account, tenant, agent).
    Bearer(&'a str),
    /// Tenant client credentials.
    Client(&'a ClientCredentials),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredCredential {
    credential_token: OpaqueId,
    tenant_id: OpaqueId,
    owner: EntityRef,
    ctype: CredentialType,
    /// base64
    ciphertext: String,
    /// base64, 12 bytes
    nonce: String,
    version: u64,
    description: String,
    created_at: Timestamp,
    updated_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialMetadata {
    pub credential_token: OpaqueId,
    pub tenant_id: OpaqueId,
    pub owner: EntityRef,
    pub ctype: CredentialType,
    pub version: u64,
    pub description: String,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

impl From<&StoredCredential> for CredentialMetadata {
    fn from(s: &StoredCredential) -> Self {
        CredentialMetadata {
            credential_token: s.credential_token.clone(),
            tenant_id: s.tenant_id.clone(),
            owner: s.owner.clone(),
            ctype: s.ctype,
            version: s.version,
            description: s.description.clone(),
            created_at: s.created_at,
            updated_at: s.updated_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingEntry {
    pub credential_token: OpaqueId,
    pub grantee: EntityRef,
    pub permission: Permission,
    pub granted_by: EntityRef,
    pub granted_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedCredential {
    pub ctype: CredentialType,
    pub payload: Vec<u8>,
    pub version: u64,
}

/// Canonical encoding of a key-value set: JSON object with sorted keys.
pub fn encode_kv(kv: &BTreeMap<String, String>) -> Vec<u8> {
    serde_json::to_vec(kv).expect("string map serializes")
}

pub fn decode_kv(bytes: &[u8]) -> Result<BTreeMap<String, String>> {
    serde_json::from_slice(bytes)
        .map_err(|_| Error::validation("KV_SET payload must be a JSON object of strings"))
}

fn normalize_payload(ctype: CredentialType, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() > MAX_PAYLOAD_BYTES {
        return Err(Error::validation(format!(
            "payload is {} bytes, limit is {MAX_PAYLOAD_BYTES}",
            payload.len()
        )));
    }
    let normalized = match ctype {
        CredentialType::KvSet => encode_kv(&decode_kv(payload)?),
        _ => payload.to_vec(),
    };
    if normalized.len() > MAX_PAYLOAD_BYTES {
        return Err(Error::validation("encoded payload exceeds the size limit"));
    }
    Ok(normalized)
}

fn share_key(credential: &OpaqueId, grantee: &EntityRef) -> String {
    format!("{credential}/{grantee}")
}

fn load_credential(txn: &mut Txn, credential: &OpaqueId) -> Result<StoredCredential> {
    txn.get(CREDENTIALS, &credential.to_string())?
        .ok_or_else(|| Error::not_found(format!("credential {credential} not found")))
}

fn shares_of(txn: &mut Txn, credential: &OpaqueId) -> Result<Vec<SharingEntry>> {
    Ok(txn
        .scan::<SharingEntry>(SHARES, &format!("{credential}/"))?
        .into_iter()
        .map(|(_, s)| s)
        .collect())
}

/// Does the referenced principal exist (and is it live)?
fn entity_exists(txn: &mut Txn, e: &EntityRef) -> Result<bool> {
    Ok(match e.kind {
        EntityKind::Tenant => txn.exists(tenant::TENANTS, &e.tenant_id.to_string()),
        EntityKind::User => users::find_user(txn, &e.local_id)?.is_some_and(|u| u.tenant_id == e.tenant_id),
        EntityKind::Group => users::find_group(txn, &e.local_id)?.is_some_and(|g| g.tenant_id == e.tenant_id),
        EntityKind::ServiceAccount => service_account::find_account(txn, &e.local_id)?
            .is_some_and(|a| a.tenant_id == e.tenant_id && a.status == service_account::AccountStatus::Active),
        EntityKind::Agent => agent::find_agent(txn, &e.local_id)?
            .is_some_and(|a| a.tenant_id == e.tenant_id && a.status == agent::AgentStatus::Active),
    })
}

/// The effective permission `entity` holds on a credential, if any.
fn effective_permission(txn: &mut Txn, cred: &StoredCredential, entity: &EntityRef) -> Result<Option<Permission>> {
    if cred.owner == *entity {
        return Ok(Some(Permission::Owner));
    }
    let shares = shares_of(txn, &cred.credential_token)?;
    let mut best = shares.iter().filter(|s| s.grantee == *entity).map(|s| s.permission).max();
    match entity.kind {
        EntityKind::User => {
            let groups = users::groups_containing(txn, entity)?;
            let via_group = shares
                .iter()
                .filter(|s| s.grantee.kind == EntityKind::Group && groups.contains(&s.grantee.local_id))
                .map(|s| s.permission)
                .max();
            best = best.max(via_group);
        }
        EntityKind::Agent => {
            // an agent acts for its tenant
            let tenant = EntityRef::tenant(&entity.tenant_id);
            let via_tenant = shares.iter().filter(|s| s.grantee == tenant).map(|s| s.permission).max();
            best = best.max(via_tenant);
        }
        _ => {}
    }
    Ok(best)
}

impl Tenet {
    /// Authenticates a caller. Agent tokens are only accepted when
    /// `allow_agent` is set, i.e. for fetches.
    pub(crate) fn resolve_caller(&self, txn: &mut Txn, caller: &Caller<'_>, allow_agent: bool) -> Result<EntityRef> {
        match caller {
            Caller::Bearer(token) => {
                let claims = self.validate_in(txn, token, None, None)?;
                match claims.typ {
                    TokenType::Access => Ok(claims.sub),
                    TokenType::Agent if allow_agent => Ok(claims.sub),
                    TokenType::Agent => Err(Error::access_denied("agents may only fetch credentials")),
                    TokenType::Id | TokenType::Refresh => {
                        Err(Error::access_denied("an access token is required"))
                    }
                }
            }
            Caller::Client(creds) => {
                let ctx = authenticate_tenant(txn, creds)?;
                Ok(EntityRef::tenant(&ctx.tenant_id))
            }
        }
    }

    /// Encrypts under the master key; returns base64 (ciphertext, nonce).
    pub(crate) fn seal(&self, aad: &str, plaintext: &[u8]) -> Result<(String, String)> {
        let nonce: [u8; 12] = rand::random();
        let ct = self
            .cipher
            .encrypt(Nonce::from_slice(&nonce), AeadPayload { msg: plaintext, aad: aad.as_bytes() })
            .map_err(|_| Error::internal("encryption failed"))?;
        Ok((STANDARD.encode(ct), STANDARD.encode(nonce)))
    }

    pub(crate) fn open(&self, aad: &str, ciphertext: &str, nonce: &str) -> Result<Vec<u8>> {
        let integrity = || Error::internal(format!("{aad}: sealed value failed integrity check"));
        let ct = STANDARD.decode(ciphertext).map_err(|_| integrity())?;
        let nonce = STANDARD.decode(nonce).map_err(|_| integrity())?;
        if nonce.len() != 12 {
            return Err(integrity());
        }
        self.cipher
            .decrypt(Nonce::from_slice(&nonce), AeadPayload { msg: &ct, aad: aad.as_bytes() })
            .map_err(|_| integrity())
    }

    pub(crate) fn fetch_in(&self, txn: &mut Txn, entity: &EntityRef, credential: &OpaqueId) -> Result<FetchedCredential> {
        let cred = load_credential(txn, credential)?;
        match effective_permission(txn, &cred, entity)? {
            Some(p) if p >= Permission::Read => {}
            _ => return Err(Error::access_denied(format!("{entity} may not read {credential}"))),
        }
        Ok(FetchedCredential {
            ctype: cred.ctype,
            payload: self.open(&credential.to_string(), &cred.ciphertext, &cred.nonce)?,
            version: cred.version,
        })
    }

    pub fn store_credential(
        &self,
        caller: &Caller<'_>,
        ctype: CredentialType,
        payload: &[u8],
        description: &str,
    ) -> Result<OpaqueId> {
        let plaintext = normalize_payload(ctype, payload)?;
        let now = self.now();
        self.store.transact(|txn| {
            let owner = self.resolve_caller(txn, caller, false)?;
            let token = OpaqueId::generate(IdKind::Credential);
            let (ciphertext, nonce) = self.seal(&token.to_string(), &plaintext)?;
            let record = StoredCredential {
                credential_token: token.clone(),
                tenant_id: owner.tenant_id.clone(),
                owner,
                ctype,
                ciphertext,
                nonce,
                version: 1,
                description: description.to_string(),
                created_at: now,
                updated_at: now,
            };
            txn.put(CREDENTIALS, &token.to_string(), &record)?;
            Ok(token)
        })
    }

    /// Fetch by any authenticated principal. The scheme follows from who the
    /// caller is: agent token, tenant credentials or user token.
    pub fn fetch_credential(&self, caller: &Caller<'_>, credential: &OpaqueId) -> Result<FetchedCredential> {
        self.store.read(|txn| {
            let entity = self.resolve_caller(txn, caller, true)?;
            self.fetch_in(txn, &entity, credential)
        })
    }

    pub fn update_credential(&self, caller: &Caller<'_>, credential: &OpaqueId, payload: &[u8]) -> Result<u64> {
        let now = self.now();
        self.store.transact(|txn| {
            let entity = self.resolve_caller(txn, caller, false)?;
            let mut cred = load_credential(txn, credential)?;
            let plaintext = normalize_payload(cred.ctype, payload)?;
            if effective_permission(txn, &cred, &entity)? < Some(Permission::Write) {
                return Err(Error::access_denied(format!("{entity} may not update {credential}")));
            }
            let (ciphertext, nonce) = self.seal(&credential.to_string(), &plaintext)?;
            cred.ciphertext = ciphertext;
            cred.nonce = nonce;
            cred.version += 1;
            cred.updated_at = now;
            txn.put(CREDENTIALS, &credential.to_string(), &cred)?;
            Ok(cred.version)
        })
    }

    pub fn delete_credential(&self, caller: &Caller<'_>, credential: &OpaqueId) -> Result<()> {
        self.store.transact(|txn| {
            let entity = self.resolve_caller(txn, caller, false)?;
            let cred = load_credential(txn, credential)?;
            if effective_permission(txn, &cred, &entity)? < Some(Permission::Owner) {
                return Err(Error::access_denied(format!("{entity} may not delete {credential}")));
            }
            for s in shares_of(txn, credential)? {
                txn.delete(SHARES, &share_key(credential, &s.grantee));
            }
            txn.delete(CREDENTIALS, &credential.to_string());
            Ok(())
        })
    }

    pub fn share_credential(
        &self,
        caller: &Caller<'_>,
        credential: &OpaqueId,
        grantee: &EntityRef,
        permission: Permission,
    ) -> Result<()> {
        let now = self.now();
        self.store.transact(|txn| {
            let entity = self.resolve_caller(txn, caller, false)?;
            let cred = load_credential(txn, credential)?;
            if effective_permission(txn, &cred, &entity)? < Some(Permission::Owner) {
                return Err(Error::access_denied(format!("{entity} may not share {credential}")));
            }
            // only tenants may be granted across tenant boundaries
            let visible = grantee.kind == EntityKind::Tenant || grantee.tenant_id == cred.tenant_id;
            if !visible || !entity_exists(txn, grantee)? {
                return Err(Error::not_found(format!("grantee {grantee} not found")));
            }
            let entry = SharingEntry {
                credential_token: credential.clone(),
                grantee: grantee.clone(),
                permission,
                granted_by: entity.clone(),
                granted_at: now,
            };
            txn.put(SHARES, &share_key(credential, grantee), &entry)
        })
    }

    pub fn revoke_share(&self, caller: &Caller<'_>, credential: &OpaqueId, grantee: &EntityRef) -> Result<()> {
        self.store.transact(|txn| {
            let entity = self.resolve_caller(txn, caller, false)?;
            let cred = load_credential(txn, credential)?;
            if effective_permission(txn, &cred, &entity)? < Some(Permission::Owner) {
                return Err(Error::access_denied(format!("{entity} may not change sharing of {credential}")));
            }
            let key = share_key(credential, grantee);
            if !txn.exists(SHARES, &key) {
                return Err(Error::not_found(format!("{grantee} has no grant on {credential}")));
            }
            txn.delete(SHARES, &key);
            Ok(())
        })
    }

    pub fn list_shares(&self, caller: &Caller<'_>, credential: &OpaqueId) -> Result<Vec<SharingEntry>> {
        self.store.read(|txn| {
            let entity = self.resolve_caller(txn, caller, false)?;
            let cred = load_credential(txn, credential)?;
            if effective_permission(txn, &cred, &entity)? < Some(Permission::Owner) {
                return Err(Error::access_denied(format!("{entity} may not view sharing of {credential}")));
            }
            shares_of(txn, credential)
        })
    }

    pub fn check_access(&self, entity: &EntityRef, credential: &OpaqueId, permission: Permission) -> Result<bool> {
        self.store.read(|txn| {
            let cred = load_credential(txn, credential)?;
            Ok(effective_permission(txn, &cred, entity)? >= Some(permission))
        })
    }

    /// Metadata of every credential the caller can read. Never payloads.
    pub fn list_accessible(&self, caller: &Caller<'_>) -> Result<Vec<CredentialMetadata>> {
        self.store.read(|txn| {
            let entity = self.resolve_caller(txn, caller, false)?;
            let all: Vec<StoredCredential> = txn
                .scan::<StoredCredential>(CREDENTIALS, "")?
                .into_iter()
                .map(|(_, c)| c)
                .collect();
            let mut out = Vec::new();
            for cred in &all {
                if effective_permission(txn, cred, &entity)? >= Some(Permission::Read) {
                    out.push(CredentialMetadata::from(cred));
                }
            }
            Ok(out)
        })
    }
}
