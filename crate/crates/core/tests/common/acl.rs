//! Brute-force ACL evaluator for the vault, checked against the service
//! over random populations and random store/share/revoke scripts.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use tenet_core::id::{EntityRef, OpaqueId};
use tenet_core::vault::{Caller, CredentialType, Permission};
use tenet_core::{ClientCredentials, ErrorCode};

use super::fixture::{fixture, Fixture};

const USERS: usize = 6;
const GROUPS: usize = 4;

/// Everyone who might ask for a credential.
#[derive(Debug, Clone)]
pub enum Principal {
    User(usize),
    ServiceAccount,
    Agent(usize),
    /// Tenant credentials of the gateway (0) or the middleware (1).
    Tenant(usize),
    /// The middleware tenant's agent.
    ForeignAgent,
}

pub struct Population {
    pub f: Fixture,
    gateway: OpaqueId,
    middleware: OpaqueId,
    gateway_creds: ClientCredentials,
    middleware_creds: ClientCredentials,
    users: Vec<(OpaqueId, String)>,
    groups: Vec<OpaqueId>,
    /// edges: group index -> member groups / member users
    group_groups: Vec<Vec<usize>>,
    group_users: Vec<Vec<usize>>,
    sa: (OpaqueId, String),
    agents: Vec<(OpaqueId, String)>,
    foreign_agent: (OpaqueId, String),
}

impl Population {
    pub fn build(rng: &mut impl Rng) -> Population {
        let f = fixture();
        let (gateway, gateway_creds) = f.admin("Gateway");
        let (middleware, middleware_creds) = f.admin("Middleware");
        let users: Vec<_> = (0..USERS).map(|i| f.user(&gateway_creds, i)).collect();
        let groups: Vec<_> = (0..GROUPS)
            .map(|i| f.tenet.create_group(&gateway_creds, &format!("g{i}"), vec![]).unwrap())
            .collect();
        let mut group_groups = vec![Vec::new(); GROUPS];
        let mut group_users = vec![Vec::new(); GROUPS];
        for outer in 0..GROUPS {
            for inner in outer + 1..GROUPS {
                if rng.random_bool(0.3) {
                    f.tenet
                        .add_member(&gateway_creds, &groups[outer], &EntityRef::group(&gateway, &groups[inner]))
                        .unwrap();
                    group_groups[outer].push(inner);
                }
            }
            for u in 0..USERS {
                if rng.random_bool(0.25) {
                    f.tenet
                        .add_member(&gateway_creds, &groups[outer], &EntityRef::user(&gateway, &users[u].0))
                        .unwrap();
                    group_users[outer].push(u);
                }
            }
        }
        let (sa_id, sa_secret) = f
            .tenet
            .register_service_account(&gateway_creds, "worker", vec![], Default::default())
            .unwrap();
        let sa_token = f
            .tenet
            .grant_client_credentials(&ClientCredentials::new(sa_id.to_string(), sa_secret))
            .unwrap()
            .access_token;
        let agent = |creds: &ClientCredentials| {
            let (id, secret) = f.tenet.register_agent(creds).unwrap();
            let token = f.tenet.agent_login(&id.to_string(), &secret).unwrap().access_token;
            (id, token)
        };
        let agents = vec![agent(&gateway_creds), agent(&gateway_creds)];
        let foreign_agent = agent(&middleware_creds);
        Population {
            f,
            gateway,
            middleware,
            gateway_creds,
            middleware_creds,
            users,
            groups,
            group_groups,
            group_users,
            sa: (sa_id, sa_token),
            agents,
            foreign_agent,
        }
    }

    pub fn principals(&self) -> Vec<Principal> {
        let mut all: Vec<_> = (0..USERS).map(Principal::User).collect();
        all.push(Principal::ServiceAccount);
        all.extend((0..self.agents.len()).map(Principal::Agent));
        all.push(Principal::Tenant(0));
        all.push(Principal::Tenant(1));
        all.push(Principal::ForeignAgent);
        all
    }

    pub fn entity(&self, p: &Principal) -> EntityRef {
        match *p {
            Principal::User(i) => EntityRef::user(&self.gateway, &self.users[i].0),
            Principal::ServiceAccount => EntityRef::service_account(&self.gateway, &self.sa.0),
            Principal::Agent(i) => EntityRef::agent(&self.gateway, &self.agents[i].0),
            Principal::Tenant(0) => EntityRef::tenant(&self.gateway),
            Principal::Tenant(_) => EntityRef::tenant(&self.middleware),
            Principal::ForeignAgent => EntityRef::agent(&self.middleware, &self.foreign_agent.0),
        }
    }

    pub fn caller<'a>(&'a self, p: &Principal) -> Caller<'a> {
        match *p {
            Principal::User(i) => Caller::Bearer(&self.users[i].1),
            Principal::ServiceAccount => Caller::Bearer(&self.sa.1),
            Principal::Agent(i) => Caller::Bearer(&self.agents[i].1),
            Principal::Tenant(0) => Caller::Client(&self.gateway_creds),
            Principal::Tenant(_) => Caller::Client(&self.middleware_creds),
            Principal::ForeignAgent => Caller::Bearer(&self.foreign_agent.1),
        }
    }

    /// Candidate grantees: every principal plus every group.
    fn grantees(&self) -> Vec<EntityRef> {
        let mut all: Vec<_> = self.principals().iter().map(|p| self.entity(p)).collect();
        all.extend(self.groups.iter().map(|g| EntityRef::group(&self.gateway, g)));
        all
    }

    /// Users reachable downward from group `g`, by plain DFS over the
    /// recorded edges.
    fn closure(&self, g: usize) -> BTreeSet<usize> {
        let mut users = BTreeSet::new();
        let mut stack = vec![g];
        let mut seen = BTreeSet::new();
        while let Some(x) = stack.pop() {
            if !seen.insert(x) {
                continue;
            }
            users.extend(self.group_users[x].iter().copied());
            stack.extend(self.group_groups[x].iter().copied());
        }
        users
    }

    /// The oracle: effective permission of `p` given owner and grants.
    pub fn oracle(&self, owner: &EntityRef, grants: &BTreeMap<EntityRef, Permission>, p: &Principal) -> Option<Permission> {
        let me = self.entity(p);
        if *owner == me {
            return Some(Permission::Owner);
        }
        let mut best = grants.get(&me).copied();
        let mut consider = |perm: Permission| best = best.max(Some(perm));
        match *p {
            Principal::User(u) => {
                for (gi, g) in self.groups.iter().enumerate() {
                    if let Some(&perm) = grants.get(&EntityRef::group(&self.gateway, g)) {
                        if self.closure(gi).contains(&u) {
                            consider(perm);
                        }
                    }
                }
            }
            Principal::Agent(_) => {
                if let Some(&perm) = grants.get(&EntityRef::tenant(&self.gateway)) {
                    consider(perm);
                }
            }
            Principal::ForeignAgent => {
                if let Some(&perm) = grants.get(&EntityRef::tenant(&self.middleware)) {
                    consider(perm);
                }
            }
            _ => {}
        }
        best
    }

    /// One script: store as a random owner, apply random grants and
    /// revocations, then compare every principal's access to the oracle.
    pub fn script(&self, rng: &mut impl Rng) -> Result<usize, String> {
        let owners = [Principal::User(rng.random_range(0..USERS)), Principal::ServiceAccount];
        let owner_p = owners.choose(rng).unwrap().clone();
        let owner = self.entity(&owner_p);
        let payload: Vec<u8> = (0..rng.random_range(1..64)).map(|_| rng.random()).collect();
        let tenet = &self.f.tenet;
        let cred = tenet
            .store_credential(&self.caller(&owner_p), CredentialType::ApiToken, &payload, "")
            .map_err(|e| format!("store: {e}"))?;

        let grantees = self.grantees();
        let mut grants: BTreeMap<EntityRef, Permission> = BTreeMap::new();
        let perms = [Permission::Read, Permission::Write, Permission::Owner];
        for _ in 0..rng.random_range(0..6) {
            let g = grantees.choose(rng).unwrap().clone();
            if rng.random_bool(0.75) {
                let perm = *perms.choose(rng).unwrap();
                let r = tenet.share_credential(&self.caller(&owner_p), &cred, &g, perm);
                // only tenants cross the tenant boundary
                let visible = g.tenant_id == self.gateway || g == EntityRef::tenant(&self.middleware);
                match (r, visible) {
                    (Ok(()), true) => {
                        grants.insert(g, perm);
                    }
                    (Err(e), false) if e.code == ErrorCode::NotFound => {}
                    (r, v) => return Err(format!("share to {g} (visible={v}): {r:?}")),
                }
            } else {
                let r = tenet.revoke_share(&self.caller(&owner_p), &cred, &g);
                match (r, grants.remove(&g).is_some()) {
                    (Ok(()), true) => {}
                    (Err(e), false) if e.code == ErrorCode::NotFound => {}
                    (r, had) => return Err(format!("revoke {g} (had={had}): {r:?}")),
                }
            }
        }

        let mut checks = 0;
        for p in self.principals() {
            let want = self.oracle(&owner, &grants, &p);
            let fetched = tenet.fetch_credential(&self.caller(&p), &cred);
            match (&fetched, want >= Some(Permission::Read)) {
                (Ok(c), true) if c.payload == payload => {}
                (Err(e), false) if e.code == ErrorCode::AccessDenied => {}
                (got, allowed) => return Err(format!("fetch by {p:?}: {got:?}, oracle allows={allowed}")),
            }
            for perm in perms {
                let got = tenet.check_access(&self.entity(&p), &cred, perm).map_err(|e| e.to_string())?;
                if got != (want >= Some(perm)) {
                    return Err(format!("check_access {p:?} {perm:?}: {got}, oracle {want:?}"));
                }
            }
            checks += 4;
        }
        Ok(checks)
    }
}
