use std::sync::Arc;

use tenet_core::clock::FakeClock;
use tenet_core::id::OpaqueId;
use tenet_core::idp::{AuthorizeRedirect, InProcessExchange, LoginResult, NewIdp};
use tenet_core::mockidp::Persona;
use tenet_core::store::Store;
use tenet_core::tenant::{Decision, TenantProfile};
use tenet_core::{ClientCredentials, Result, Tenet, TenetConfig};

pub const OPERATOR_KEY: &str = "fixture-operator-key";
pub const REDIRECT: &str = "https://gateway.example/callback";
pub const START: u64 = 1_700_000_000;

pub fn profile(name: &str) -> TenantProfile {
    TenantProfile {
        name: name.to_string(),
        contact_email: "admin@example.org".to_string(),
        redirect_uris: vec![REDIRECT.to_string()],
        description: String::new(),
    }
}

/// `n` personas named p0..p(n-1), each a distinct person at urn:fixture.
pub fn personas(n: usize) -> Vec<Persona> {
    (0..n)
        .map(|i| Persona {
            username: format!("p{i}"),
            password: format!("pw{i}"),
            subject: format!("subject-{i}"),
            email: format!("p{i}@fixture.example"),
            institution: "urn:fixture".to_string(),
        })
        .collect()
}

pub struct Fixture {
    pub tenet: Arc<Tenet>,
    pub clock: Arc<FakeClock>,
}

pub fn fixture() -> Fixture {
    fixture_with(Store::in_memory(), personas(16))
}

pub fn fixture_with(store: Store, personas: Vec<Persona>) -> Fixture {
    let clock = FakeClock::new(START);
    let config = TenetConfig {
        signing_key: [11u8; 32],
        master_key: [22u8; 32],
        operator_key: OPERATOR_KEY.to_string(),
        callback_url: "http://127.0.0.1:9/oauth2/callback".to_string(),
        personas,
    };
    let tenet = Tenet::with_clock(store, config, clock.clone());
    Fixture { tenet, clock }
}

pub fn mock_idp(alias: &str) -> NewIdp {
    NewIdp {
        alias: alias.to_string(),
        authorize_endpoint: "http://127.0.0.1:9/mockidp/authorize".to_string(),
        token_endpoint: "http://127.0.0.1:9/mockidp/token".to_string(),
        broker_client_id: format!("broker-{alias}"),
        broker_client_secret: format!("broker-secret-{alias}"),
        entity_id_param: "idphint".to_string(),
    }
}

fn query(url: &str, name: &str) -> String {
    url::Url::parse(url)
        .unwrap()
        .query_pairs()
        .find(|(k, _)| k == name)
        .map(|(_, v)| v.into_owned())
        .unwrap_or_default()
}

impl Fixture {
    /// An approved admin tenant that can log users in through alias "mock".
    pub fn admin(&self, name: &str) -> (OpaqueId, ClientCredentials) {
        let id = self.tenet.request_admin_tenant(profile(name)).unwrap();
        let creds = self
            .tenet
            .decide_tenant_request(OPERATOR_KEY, &id, Decision::Approve)
            .unwrap()
            .unwrap()
            .as_client();
        self.tenet.register_idp(&creds, mock_idp("mock")).unwrap();
        (id, creds)
    }

    /// Drives the browser leg at the mock IdP; returns (state, code).
    pub fn browser(&self, redirect: &AuthorizeRedirect, persona: &str, password: &str) -> (String, String) {
        let code = self
            .tenet
            .mock_idp()
            .authorize(
                &query(&redirect.url, "client_id"),
                &query(&redirect.url, "redirect_uri"),
                persona,
                password,
            )
            .unwrap();
        (query(&redirect.url, "state"), code)
    }

    pub fn login_via(
        &self,
        creds: &ClientCredentials,
        hint: Option<&str>,
        entity: Option<&str>,
        persona: &str,
        password: &str,
    ) -> Result<LoginResult> {
        let redirect = self.tenet.begin_login(&creds.client_id, hint, entity, REDIRECT, None)?;
        let (state, code) = self.browser(&redirect, persona, password);
        self.tenet.complete_login(&state, &code, &InProcessExchange(&self.tenet))
    }

    /// Logs persona `p{i}` in and returns (user id, access token).
    pub fn user(&self, creds: &ClientCredentials, i: usize) -> (OpaqueId, String) {
        let r = self
            .login_via(creds, Some("mock"), None, &format!("p{i}"), &format!("pw{i}"))
            .unwrap();
        (r.user_id, r.tokens.access_token)
    }
}
