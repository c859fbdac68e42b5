//! Opaque identifiers and entity references.
//!
//! Every id renders as `<prefix>-<body>` where the body is 128 random bits in
//! lowercase, unpadded base32 (26 characters).

use std::fmt;
use std::str::FromStr;

use data_encoding::BASE32_NOPAD;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const BODY_LEN: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IdKind {
    Tenant,
    User,
    Group,
    ServiceAccount,
    Agent,
    Credential,
    Client,
    OAuthClient,
    Session,
    TokenId,
    Code,
    Request,
    Audit,
}

impl IdKind {
    pub const ALL: [IdKind; 13] = [
        IdKind::Tenant,
        IdKind::User,
        IdKind::Group,
        IdKind::ServiceAccount,
        IdKind::Agent,
        IdKind::Credential,
        IdKind::Client,
        IdKind::OAuthClient,
        IdKind::Session,
        IdKind::TokenId,
        IdKind::Code,
        IdKind::Request,
        IdKind::Audit,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            IdKind::Tenant => "ten",
            IdKind::User => "usr",
            IdKind::Group => "grp",
            IdKind::ServiceAccount => "svc",
            IdKind::Agent => "agt",
            IdKind::Credential => "cred",
            IdKind::Client => "cli",
            IdKind::OAuthClient => "ocl",
            IdKind::Session => "ses",
            IdKind::TokenId => "jti",
            IdKind::Code => "cod",
            IdKind::Request => "req",
            IdKind::Audit => "aud",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<IdKind> {
        IdKind::ALL.into_iter().find(|k| k.prefix() == prefix)
    }
}

/// A typed random identifier.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpaqueId {
    kind: IdKind,
    body: [u8; 16],
}

impl OpaqueId {
    pub fn generate(kind: IdKind) -> Self {
        let mut body = [0u8; 16];
        rand::rng().fill_bytes(&mut body);
        OpaqueId { kind, body }
    }

    pub fn kind(&self) -> IdKind {
        self.kind
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (prefix, body) = s
            .split_once('-')
            .ok_or_else(|| Error::validation(format!("malformed id {s:?}")))?;
        let kind = IdKind::from_prefix(prefix)
            .ok_or_else(|| Error::validation(format!("unknown id prefix {prefix:?}")))?;
        if body.len() != BODY_LEN || body.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(Error::validation(format!("malformed id body in {s:?}")));
        }
        let decoded = BASE32_NOPAD
            .decode(body.to_ascii_uppercase().as_bytes())
            .map_err(|_| Error::validation(format!("malformed id body in {s:?}")))?;
        let body: [u8; 16] = decoded
            .try_into()
            .map_err(|_| Error::validation(format!("malformed id body in {s:?}")))?;
        let id = OpaqueId { kind, body };
        // base32 leaves two spare bits in the last symbol; reject non-canonical forms.
        if id.to_string() != s {
            return Err(Error::validation(format!("non-canonical id {s:?}")));
        }
        Ok(id)
    }

    /// Parses and requires a specific kind.
    pub fn parse_kind(s: &str, kind: IdKind) -> Result<Self> {
        let id = OpaqueId::parse(s)?;
        if id.kind != kind {
            return Err(Error::validation(format!(
                "expected a {} id, got {s:?}",
                kind.prefix()
            )));
        }
        Ok(id)
    }
}

impl fmt::Display for OpaqueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = BASE32_NOPAD.encode(&self.body).to_ascii_lowercase();
        write!(f, "{}-{}", self.kind.prefix(), body)
    }
}

impl fmt::Debug for OpaqueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for OpaqueId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpaqueId::parse(s)
    }
}

impl Serialize for OpaqueId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OpaqueId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        OpaqueId::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityKind {
    Tenant,
    User,
    Group,
    ServiceAccount,
    Agent,
}

impl EntityKind {
    pub fn tag(self) -> &'static str {
        match self {
            EntityKind::Tenant => "tenant",
            EntityKind::User => "user",
            EntityKind::Group => "group",
            EntityKind::ServiceAccount => "service_account",
            EntityKind::Agent => "agent",
        }
    }

    fn from_tag(tag: &str) -> Option<EntityKind> {
        [
            EntityKind::Tenant,
            EntityKind::User,
            EntityKind::Group,
            EntityKind::ServiceAccount,
            EntityKind::Agent,
        ]
        .into_iter()
        .find(|k| k.tag() == tag)
    }

    pub fn id_kind(self) -> IdKind {
        match self {
            EntityKind::Tenant => IdKind::Tenant,
            EntityKind::User => IdKind::User,
            EntityKind::Group => IdKind::Group,
            EntityKind::ServiceAccount => IdKind::ServiceAccount,
            EntityKind::Agent => IdKind::Agent,
        }
    }
}

/// A principal or grantee, scoped to the tenant that owns it.
///
/// Wire form: `<kind>:<tenant_id>:<local_id>`, e.g.
/// `user:ten-...:usr-...`. A tenant refers to itself: `tenant:ten-x:ten-x`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub tenant_id: OpaqueId,
    pub local_id: OpaqueId,
}

impl EntityRef {
    pub fn new(kind: EntityKind, tenant_id: OpaqueId, local_id: OpaqueId) -> Result<Self> {
        if tenant_id.kind() != IdKind::Tenant {
            return Err(Error::validation("entity tenant must be a tenant id"));
        }
        if local_id.kind() != kind.id_kind() {
            return Err(Error::validation(format!(
                "{} entity cannot carry id {local_id}",
                kind.tag()
            )));
        }
        if kind == EntityKind::Tenant && local_id != tenant_id {
            return Err(Error::validation("tenant entity must refer to itself"));
        }
        Ok(EntityRef {
            kind,
            tenant_id,
            local_id,
        })
    }

    pub fn tenant(tenant_id: &OpaqueId) -> Self {
        EntityRef {
            kind: EntityKind::Tenant,
            tenant_id: tenant_id.clone(),
            local_id: tenant_id.clone(),
        }
    }

    pub fn user(tenant_id: &OpaqueId, user_id: &OpaqueId) -> Self {
        EntityRef::new(EntityKind::User, tenant_id.clone(), user_id.clone())
            .expect("user ref from typed ids")
    }

    pub fn group(tenant_id: &OpaqueId, group_id: &OpaqueId) -> Self {
        EntityRef::new(EntityKind::Group, tenant_id.clone(), group_id.clone())
            .expect("group ref from typed ids")
    }

    pub fn service_account(tenant_id: &OpaqueId, account_id: &OpaqueId) -> Self {
        EntityRef::new(EntityKind::ServiceAccount, tenant_id.clone(), account_id.clone())
            .expect("service account ref from typed ids")
    }

    pub fn agent(tenant_id: &OpaqueId, agent_id: &OpaqueId) -> Self {
        EntityRef::new(EntityKind::Agent, tenant_id.clone(), agent_id.clone())
            .expect("agent ref from typed ids")
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let (Some(kind), Some(tenant), Some(local), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::validation(format!("malformed entity ref {s:?}")));
        };
        let kind = EntityKind::from_tag(kind)
            .ok_or_else(|| Error::validation(format!("unknown entity kind {kind:?}")))?;
        EntityRef::new(kind, OpaqueId::parse(tenant)?, OpaqueId::parse(local)?)
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind.tag(), self.tenant_id, self.local_id)
    }
}

impl fmt::Debug for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for EntityRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityRef::parse(s)
    }
}

impl Serialize for EntityRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        EntityRef::parse(&s).map_err(serde::de::Error::custom)
    }
}
