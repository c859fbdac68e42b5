//! The three retrieval schemes: agent, delegated middleware, end user.

use rand::Rng;
use tenet_core::id::{EntityRef, OpaqueId};
use tenet_core::vault::{encode_kv, Caller, CredentialType, FetchedCredential, Permission};
use tenet_core::{ClientCredentials, ErrorCode, Result};

use super::fixture::{fixture, Fixture};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Agent,
    Delegated,
    User,
}

pub const SCHEMES: [Scheme; 3] = [Scheme::Agent, Scheme::Delegated, Scheme::User];

pub struct Setup {
    pub f: Fixture,
    gateway: OpaqueId,
    middleware: OpaqueId,
    middleware_creds: ClientCredentials,
    owner_token: String,
    /// a second user reached through a direct grant
    grantee: (OpaqueId, String),
    agent: (OpaqueId, String),
}

impl Setup {
    pub fn new() -> Setup {
        let f = fixture();
        let (gateway, gw) = f.admin("Gateway");
        let (middleware, middleware_creds) = f.admin("Middleware");
        let (_, owner_token) = f.user(&gw, 0);
        let grantee = f.user(&gw, 1);
        let (agent_id, secret) = f.tenet.register_agent(&gw).unwrap();
        let agent_token = f.tenet.agent_login(&agent_id.to_string(), &secret).unwrap().access_token;
        Setup {
            f,
            gateway,
            middleware,
            middleware_creds,
            owner_token,
            grantee,
            agent: (agent_id, agent_token),
        }
    }

    fn owner(&self) -> Caller<'_> {
        Caller::Bearer(&self.owner_token)
    }

    pub fn grant_target(&self, s: Scheme) -> EntityRef {
        match s {
            Scheme::Agent => EntityRef::agent(&self.gateway, &self.agent.0),
            Scheme::Delegated => EntityRef::tenant(&self.middleware),
            Scheme::User => EntityRef::user(&self.gateway, &self.grantee.0),
        }
    }

    /// Stores a credential owned by user 0 and grants READ for all three
    /// schemes.
    pub fn configure(&self, ctype: CredentialType, payload: &[u8]) -> Result<OpaqueId> {
        let cred = self.f.tenet.store_credential(&self.owner(), ctype, payload, "scheme test")?;
        for s in SCHEMES {
            self.f.tenet.share_credential(&self.owner(), &cred, &self.grant_target(s), Permission::Read)?;
        }
        Ok(cred)
    }

    pub fn revoke(&self, cred: &OpaqueId, s: Scheme) -> Result<()> {
        self.f.tenet.revoke_share(&self.owner(), cred, &self.grant_target(s))
    }

    pub fn fetch(&self, s: Scheme, cred: &OpaqueId) -> Result<FetchedCredential> {
        match s {
            Scheme::Agent => self.f.tenet.fetch_as_agent(&self.agent.1, cred),
            Scheme::Delegated => self.f.tenet.fetch_delegated(&self.middleware_creds, cred),
            Scheme::User => self.f.tenet.fetch_as_user(&self.grantee.1, cred),
        }
    }

    pub fn fetch_as_owner(&self, cred: &OpaqueId) -> Result<FetchedCredential> {
        self.f.tenet.fetch_as_user(&self.owner_token, cred)
    }
}

pub fn random_credential(rng: &mut impl Rng) -> (CredentialType, Vec<u8>) {
    match rng.random_range(0..4) {
        0 => (CredentialType::SshKey, (0..rng.random_range(1..4096)).map(|_| rng.random()).collect()),
        1 => (CredentialType::Password, (0..rng.random_range(1..64)).map(|_| rng.random_range(33..127)).collect()),
        2 => (CredentialType::ApiToken, (0..rng.random_range(1..512)).map(|_| rng.random()).collect()),
        _ => {
            let kv = (0..rng.random_range(0..8))
                .map(|i| (format!("k{i}-{}", rng.random::<u16>()), format!("{}", rng.random::<u64>())))
                .collect();
            (CredentialType::KvSet, encode_kv(&kv))
        }
    }
}

/// All three schemes and the owner return the stored bytes.
pub fn equivalence(setup: &Setup, ctype: CredentialType, payload: &[u8]) -> std::result::Result<(), String> {
    let cred = setup.configure(ctype, payload).map_err(|e| e.to_string())?;
    let owner = setup.fetch_as_owner(&cred).map_err(|e| e.to_string())?;
    if owner.payload != payload {
        return Err("owner fetch differs from stored payload".into());
    }
    for s in SCHEMES {
        let got = setup.fetch(s, &cred).map_err(|e| format!("{s:?}: {e}"))?;
        if got != owner {
            return Err(format!("{s:?} returned different bytes"));
        }
    }
    Ok(())
}

/// Revoking exactly one grant disables exactly that scheme. Returns the
/// 3x3 outcome matrix (row = revoked, column = fetched).
pub fn revocation_matrix(setup: &Setup) -> std::result::Result<[[bool; 3]; 3], String> {
    let mut matrix = [[false; 3]; 3];
    for (ri, revoked) in SCHEMES.into_iter().enumerate() {
        let cred = setup.configure(CredentialType::Password, b"matrix").map_err(|e| e.to_string())?;
        setup.revoke(&cred, revoked).map_err(|e| e.to_string())?;
        for (fi, s) in SCHEMES.into_iter().enumerate() {
            matrix[ri][fi] = match setup.fetch(s, &cred) {
                Ok(_) => true,
                Err(e) if e.code == ErrorCode::AccessDenied => false,
                Err(e) => return Err(format!("revoked {revoked:?}, fetched {s:?}: {e}")),
            };
        }
    }
    Ok(matrix)
}
