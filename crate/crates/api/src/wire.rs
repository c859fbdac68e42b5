//! Request and response bodies. Domain types from the core crate are sent
//! as-is where they already have the right shape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tenet_core::id::{EntityRef, OpaqueId};
use tenet_core::oauth::{ClientKind, Lifetimes};
use tenet_core::tenant::{Decision, TenantCredentials, TenantStatus};
use tenet_core::vault::{CredentialType, Permission};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TenantCreated {
    pub tenant_id: OpaqueId,
    pub status: TenantStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub decision: Decision,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub tenant_id: OpaqueId,
    pub status: TenantStatus,
    /// Shown once, on approval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials: Option<TenantCredentials>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChildCreated {
    pub tenant_id: OpaqueId,
    pub credentials: TenantCredentials,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewUser {
    pub username: String,
    pub email: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserCreated {
    pub user_id: OpaqueId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnabledRequest {
    pub enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewGroup {
    pub name: String,
    #[serde(default)]
    pub roles: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupCreated {
    pub group_id: OpaqueId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberRequest {
    pub member: EntityRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewServiceAccount {
    pub name: String,
    #[serde(default)]
    pub roles: Vec<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// A freshly registered principal and its one-time secret. The client id
/// is the principal id itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipalCreated {
    pub id: OpaqueId,
    pub client_id: String,
    pub client_secret: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewMapping {
    pub entity_id: String,
    pub alias: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewClientConfig {
    pub kind: ClientKind,
    #[serde(flatten)]
    pub lifetimes: Lifetimes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientConfigured {
    pub client_id: OpaqueId,
}

/// Payloads travel as standard base64 so any bytes survive JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewSecret {
    pub ctype: CredentialType,
    pub payload: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecretCreated {
    pub credential_token: OpaqueId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretPayload {
    pub credential_token: OpaqueId,
    pub ctype: CredentialType,
    pub payload: String,
    pub version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateSecret {
    pub payload: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecretUpdated {
    pub version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewShare {
    pub grantee: EntityRef,
    pub permission: Permission,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TokenForm {
    pub grant_type: String,
    pub refresh_token: Option<String>,
    pub code: Option<String>,
    pub redirect_uri: Option<String>,
    pub client_id: Option<String>,
    pub client_secret: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenParam {
    pub token: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Revoked {
    pub revoked: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorizeQuery {
    pub client_id: String,
    pub redirect_uri: String,
    pub idp_hint: Option<String>,
    pub entity_id: Option<String>,
    pub state: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallbackQuery {
    pub state: String,
    pub code: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusFilter {
    pub status: Option<TenantStatus>,
}
