use std::sync::Arc;

use crate::clock::FakeClock;
use crate::id::{EntityRef, OpaqueId};
use crate::mockidp::Persona;
use crate::store::Store;
use crate::tenant::{Decision, TenantCredentials, TenantProfile};
use crate::token::{GrantType, TokenResponse};
use crate::{Tenet, TenetConfig};

pub const OPERATOR_KEY: &str = "test-operator-key";
pub const REDIRECT: &str = "https://gateway.example/callback";

pub fn profile(name: &str) -> TenantProfile {
    TenantProfile {
        name: name.to_string(),
        contact_email: "admin@example.org".to_string(),
        redirect_uris: vec![REDIRECT.to_string()],
        description: String::new(),
    }
}

pub struct Harness {
    pub tenet: Arc<Tenet>,
    pub clock: Arc<FakeClock>,
}

pub fn harness() -> Harness {
    let clock = FakeClock::new(1_700_000_000);
    let config = TenetConfig {
        signing_key: [3u8; 32],
        master_key: [5u8; 32],
        operator_key: OPERATOR_KEY.to_string(),
        callback_url: "http://127.0.0.1:9/oauth2/callback".to_string(),
        personas: Persona::defaults(),
    };
    let tenet = Tenet::with_clock(Store::in_memory(), config, clock.clone());
    Harness { tenet, clock }
}

impl Harness {
    /// An approved admin tenant.
    pub fn admin(&self, name: &str) -> (OpaqueId, TenantCredentials) {
        let id = self.tenet.request_admin_tenant(profile(name)).unwrap();
        let creds = self
            .tenet
            .decide_tenant_request(OPERATOR_KEY, &id, Decision::Approve)
            .unwrap()
            .unwrap();
        (id, creds)
    }

    /// Tokens for a user as if they had just logged in.
    pub fn user_tokens(&self, tenant: &OpaqueId, user: &OpaqueId) -> TokenResponse {
        self.tenet
            .store()
            .transact(|txn| self.tenet.issue_in(txn, &EntityRef::user(tenant, user), GrantType::AuthorizationCode))
            .unwrap()
    }

    /// Registers a user and returns it with an access token.
    pub fn user_in(&self, creds: &TenantCredentials, username: &str) -> (OpaqueId, String) {
        let c = creds.as_client();
        let tenant = self.tenet.authenticate_client(&c).unwrap().tenant_id;
        let user = self
            .tenet
            .register_user(&c, username, &format!("{username}@example.org"), Default::default())
            .unwrap();
        let token = self.user_tokens(&tenant, &user).access_token;
        (user, token)
    }
}
