//! Tenant-scoped users, nested groups and transitive membership.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::id::{EntityKind, EntityRef, IdKind, OpaqueId};
use crate::store::Txn;
use crate::tenant::{authenticate_in, is_plausible_email};
use crate::{ClientCredentials, Tenet};

pub(crate) const USERS: &str = "users";
const USERNAMES: &str = "usernames";
pub(crate) const GROUPS: &str = "groups";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalIdentity {
    pub alias: String,
    pub external_subject: String,
    pub email: String,
    pub institution_entity_id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: OpaqueId,
    pub tenant_id: OpaqueId,
    pub username: String,
    pub email: String,
    pub enabled: bool,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub external_identities: Vec<ExternalIdentity>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: OpaqueId,
    pub tenant_id: OpaqueId,
    pub name: String,
    pub members: Vec<EntityRef>,
    pub roles: Vec<String>,
}

fn validate_username(username: &str) -> Result<()> {
    let ok = !username.is_empty()
        && username.len() <= 128
        && username
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "._@+-".contains(c));
    if !ok {
        return Err(Error::validation(format!("invalid username {username:?}")));
    }
    Ok(())
}

pub(crate) fn find_user(txn: &mut Txn, user_id: &OpaqueId) -> Result<Option<UserRecord>> {
    txn.get(USERS, &user_id.to_string())
}

fn load_user_in(txn: &mut Txn, tenant_id: &OpaqueId, user_id: &OpaqueId) -> Result<UserRecord> {
    match find_user(txn, user_id)? {
        Some(u) if u.tenant_id == *tenant_id => Ok(u),
        _ => Err(Error::not_found(format!("user {user_id} not found"))),
    }
}

pub(crate) fn find_group(txn: &mut Txn, group_id: &OpaqueId) -> Result<Option<Group>> {
    txn.get(GROUPS, &group_id.to_string())
}

fn load_group_in(txn: &mut Txn, tenant_id: &OpaqueId, group_id: &OpaqueId) -> Result<Group> {
    match find_group(txn, group_id)? {
        Some(g) if g.tenant_id == *tenant_id => Ok(g),
        _ => Err(Error::not_found(format!("group {group_id} not found"))),
    }
}

/// Inserts a user, taking the username index entry. Shared with the broker.
pub(crate) fn insert_user(txn: &mut Txn, user: &UserRecord) -> Result<()> {
    let index = format!("{}/{}", user.tenant_id, user.username);
    if txn.exists(USERNAMES, &index) {
        return Err(Error::conflict(format!("username {:?} is taken", user.username)));
    }
    txn.put(USERNAMES, &index, &user.user_id)?;
    txn.put(USERS, &user.user_id.to_string(), user)
}

pub(crate) fn username_taken(txn: &mut Txn, tenant_id: &OpaqueId, username: &str) -> bool {
    txn.exists(USERNAMES, &format!("{tenant_id}/{username}"))
}

pub(crate) fn save_user(txn: &mut Txn, user: &UserRecord) -> Result<()> {
    txn.put(USERS, &user.user_id.to_string(), user)
}

/// Is `member` reachable from `group_id` through nested group membership?
pub(crate) fn is_member_in(txn: &mut Txn, group_id: &OpaqueId, member: &EntityRef) -> Result<bool> {
    let mut seen = HashSet::new();
    let mut stack = vec![group_id.clone()];
    while let Some(g) = stack.pop() {
        if !seen.insert(g.clone()) {
            continue;
        }
        let Some(group) = find_group(txn, &g)? else {
            continue;
        };
        for m in &group.members {
            if m == member {
                return Ok(true);
            }
            if m.kind == EntityKind::Group {
                stack.push(m.local_id.clone());
            }
        }
    }
    Ok(false)
}

/// Every group in the tenant that transitively contains `member`.
pub(crate) fn groups_containing(txn: &mut Txn, member: &EntityRef) -> Result<BTreeSet<OpaqueId>> {
    let groups: Vec<Group> = txn
        .scan::<Group>(GROUPS, "")?
        .into_iter()
        .map(|(_, g)| g)
        .filter(|g| g.tenant_id == member.tenant_id)
        .collect();
    // fixed point over the member -> group edges
    let mut found: BTreeSet<OpaqueId> = BTreeSet::new();
    let mut frontier = vec![member.clone()];
    while let Some(x) = frontier.pop() {
        for g in &groups {
            if !found.contains(&g.group_id) && g.members.contains(&x) {
                found.insert(g.group_id.clone());
                frontier.push(EntityRef::group(&g.tenant_id, &g.group_id));
            }
        }
    }
    Ok(found)
}

pub(crate) fn roles_for_user(txn: &mut Txn, user: &EntityRef) -> Result<Vec<String>> {
    let mut roles = BTreeSet::new();
    for g in groups_containing(txn, user)? {
        if let Some(group) = find_group(txn, &g)? {
            roles.extend(group.roles);
        }
    }
    Ok(roles.into_iter().collect())
}

impl Tenet {
    pub fn register_user(
        &self,
        tenant_creds: &ClientCredentials,
        username: &str,
        email: &str,
        attributes: BTreeMap<String, String>,
    ) -> Result<OpaqueId> {
        self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            validate_username(username)?;
            if !is_plausible_email(email) {
                return Err(Error::validation(format!("invalid email {email:?}")));
            }
            let user = UserRecord {
                user_id: OpaqueId::generate(IdKind::User),
                tenant_id: ctx.tenant_id.clone(),
                username: username.to_string(),
                email: email.to_string(),
                enabled: true,
                attributes: attributes.clone(),
                external_identities: Vec::new(),
            };
            insert_user(txn, &user)?;
            Ok(user.user_id)
        })
    }

    pub fn set_user_enabled(
        &self,
        tenant_creds: &ClientCredentials,
        user_id: &OpaqueId,
        enabled: bool,
    ) -> Result<UserRecord> {
        self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            let mut user = load_user_in(txn, &ctx.tenant_id, user_id)?;
            if user.enabled != enabled {
                user.enabled = enabled;
                save_user(txn, &user)?;
            }
            Ok(user)
        })
    }

    pub fn get_user(&self, tenant_creds: &ClientCredentials, user_id: &OpaqueId) -> Result<UserRecord> {
        self.store.read(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            load_user_in(txn, &ctx.tenant_id, user_id)
        })
    }

    pub fn list_users(&self, tenant_creds: &ClientCredentials) -> Result<Vec<UserRecord>> {
        self.store.read(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            let ids: Vec<(String, OpaqueId)> = txn.scan(USERNAMES, &format!("{}/", ctx.tenant_id))?;
            ids.into_iter()
                .map(|(_, id)| load_user_in(txn, &ctx.tenant_id, &id))
                .collect()
        })
    }

    pub fn create_group(
        &self,
        tenant_creds: &ClientCredentials,
        name: &str,
        roles: Vec<String>,
    ) -> Result<OpaqueId> {
        self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            if name.trim().is_empty() || name.len() > 128 {
                return Err(Error::validation("group name must be 1-128 characters"));
            }
            let group = Group {
                group_id: OpaqueId::generate(IdKind::Group),
                tenant_id: ctx.tenant_id.clone(),
                name: name.to_string(),
                members: Vec::new(),
                roles: roles.clone(),
            };
            txn.put(GROUPS, &group.group_id.to_string(), &group)?;
            Ok(group.group_id)
        })
    }

    pub fn list_groups(&self, tenant_creds: &ClientCredentials) -> Result<Vec<Group>> {
        self.store.read(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            Ok(txn
                .scan::<Group>(GROUPS, "")?
                .into_iter()
                .map(|(_, g)| g)
                .filter(|g| g.tenant_id == ctx.tenant_id)
                .collect())
        })
    }

    pub fn add_member(
        &self,
        tenant_creds: &ClientCredentials,
        group_id: &OpaqueId,
        member: &EntityRef,
    ) -> Result<()> {
        self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            let mut group = load_group_in(txn, &ctx.tenant_id, group_id)?;
            if member.tenant_id != ctx.tenant_id {
                return Err(Error::not_found(format!("{member} is not in this tenant")));
            }
            match member.kind {
                EntityKind::User => {
                    load_user_in(txn, &ctx.tenant_id, &member.local_id)?;
                }
                EntityKind::Group => {
                    load_group_in(txn, &ctx.tenant_id, &member.local_id)?;
                    let this = EntityRef::group(&ctx.tenant_id, group_id);
                    if member.local_id == *group_id || is_member_in(txn, &member.local_id, &this)? {
                        return Err(Error::validation("membership would create a cycle"));
                    }
                }
                _ => return Err(Error::validation("only users and groups can be group members")),
            }
            if group.members.contains(member) {
                return Err(Error::conflict(format!("{member} is already a member")));
            }
            group.members.push(member.clone());
            txn.put(GROUPS, &group_id.to_string(), &group)
        })
    }

    pub fn remove_member(
        &self,
        tenant_creds: &ClientCredentials,
        group_id: &OpaqueId,
        member: &EntityRef,
    ) -> Result<()> {
        self.store.transact(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            let mut group = load_group_in(txn, &ctx.tenant_id, group_id)?;
            let before = group.members.len();
            group.members.retain(|m| m != member);
            if group.members.len() == before {
                return Err(Error::not_found(format!("{member} is not a member")));
            }
            txn.put(GROUPS, &group_id.to_string(), &group)
        })
    }

    pub fn is_member(
        &self,
        tenant_creds: &ClientCredentials,
        group_id: &OpaqueId,
        member: &EntityRef,
    ) -> Result<bool> {
        self.store.read(|txn| {
            let ctx = authenticate_in(txn, tenant_creds)?;
            load_group_in(txn, &ctx.tenant_id, group_id)?;
            is_member_in(txn, group_id, member)
        })
    }
}
