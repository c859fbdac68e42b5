//! A scripted external identity provider used by tests, the scenario
//! harness and local deployments. It speaks just enough of the
//! authorization-code flow for the broker to exercise its real code path.

use std::collections::HashMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::{SharedClock, Timestamp};
use crate::error::{Error, Result};
use crate::secret::{constant_time_eq, generate_secret};
use crate::token::TokenCodec;

const CODE_TTL_S: u64 = 120;
const TOKEN_TTL_S: u64 = 600;
pub const ISSUER: &str = "tenet-mock-idp";

const DEFAULT_PERSONAS: &str = r#"[
  {"username": "alice", "password": "alice-pw", "subject": "alice@inst-x", "email": "alice@inst-x.edu", "institution": "urn:inst:X"},
  {"username": "bob", "password": "bob-pw", "subject": "bob@inst-y", "email": "bob@inst-y.edu", "institution": "urn:inst:Y"},
  {"username": "carol", "password": "carol-pw", "subject": "carol@inst-y", "email": "carol@inst-y.edu", "institution": "urn:inst:Y"},
  {"username": "dave", "password": "dave-pw", "subject": "dave", "email": "dave@inst-z.org", "institution": "urn:inst:Z"},
  {"username": "dave-y", "password": "dave-pw", "subject": "dave", "email": "dave@inst-y.edu", "institution": "urn:inst:Y"}
]"#;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub username: String,
    pub password: String,
    pub subject: String,
    pub email: String,
    pub institution: String,
}

impl Persona {
    pub fn defaults() -> Vec<Persona> {
        serde_json::from_str(DEFAULT_PERSONAS).expect("built-in personas parse")
    }

    pub fn load(json: &str) -> Result<Vec<Persona>> {
        serde_json::from_str(json).map_err(|e| Error::validation(format!("persona script: {e}")))
    }
}

/// Claims carried in the mock IdP's id_token, signed with the broker's
/// client secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdpIdClaims {
    pub iss: String,
    pub sub: String,
    pub aud: String,
    pub email: String,
    pub institution: String,
    pub name: String,
    pub iat: Timestamp,
    pub exp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdpTokens {
    pub access_token: String,
    pub id_token: String,
}

struct IssuedCode {
    persona: Persona,
    client_id: String,
    redirect_uri: String,
    expires_at: Timestamp,
}

pub struct MockIdp {
    personas: Vec<Persona>,
    codes: Mutex<HashMap<String, IssuedCode>>,
    clock: SharedClock,
}

impl std::fmt::Debug for MockIdp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockIdp").field("personas", &self.personas.len()).finish()
    }
}

impl MockIdp {
    pub fn new(personas: Vec<Persona>, clock: SharedClock) -> Self {
        MockIdp { personas, codes: Mutex::new(HashMap::new()), clock }
    }

    pub fn personas(&self) -> &[Persona] {
        &self.personas
    }

    /// The login step: checks the persona's password and hands out a
    /// single-use code bound to the requesting client and redirect URI.
    pub fn authorize(&self, client_id: &str, redirect_uri: &str, username: &str, password: &str) -> Result<String> {
        let persona = self
            .personas
            .iter()
            .find(|p| p.username == username && constant_time_eq(&p.password, password))
            .ok_or_else(|| Error::access_denied("unknown user or wrong password"))?;
        let code = generate_secret();
        let now = self.clock.now();
        let mut codes = self.codes.lock();
        codes.retain(|_, c| c.expires_at > now);
        codes.insert(
            code.clone(),
            IssuedCode {
                persona: persona.clone(),
                client_id: client_id.to_string(),
                redirect_uri: redirect_uri.to_string(),
                expires_at: now + CODE_TTL_S,
            },
        );
        Ok(code)
    }

    /// The token step. `client_secret_ok` decides whether the presented
    /// broker credentials are genuine; the code is burned either way.
    pub(crate) fn redeem(
        &self,
        code: &str,
        client_id: &str,
        redirect_uri: Option<&str>,
        client_secret: &str,
        client_secret_ok: bool,
    ) -> Result<IdpTokens> {
        let issued = self
            .codes
            .lock()
            .remove(code)
            .ok_or_else(|| Error::access_denied("unknown or already used code"))?;
        let now = self.clock.now();
        if issued.expires_at <= now {
            return Err(Error::access_denied("code expired"));
        }
        if issued.client_id != client_id || !client_secret_ok {
            return Err(Error::access_denied("client authentication failed"));
        }
        if redirect_uri.is_some_and(|r| r != issued.redirect_uri) {
            return Err(Error::access_denied("redirect_uri mismatch"));
        }
        let p = issued.persona;
        let claims = IdpIdClaims {
            iss: ISSUER.to_string(),
            sub: p.subject.clone(),
            aud: client_id.to_string(),
            email: p.email.clone(),
            institution: p.institution.clone(),
            name: p.username.clone(),
            iat: now,
            exp: now + TOKEN_TTL_S,
        };
        Ok(IdpTokens {
            access_token: generate_secret(),
            id_token: TokenCodec::new(client_secret.as_bytes()).sign(&claims),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FakeClock;
    use crate::ErrorCode;

    fn idp() -> (MockIdp, std::sync::Arc<FakeClock>) {
        let clock = FakeClock::new(1_000);
        (MockIdp::new(Persona::defaults(), clock.clone()), clock)
    }

    #[test]
    fn scripted_subject_and_single_use_code() {
        let (idp, _) = idp();
        let code = idp.authorize("b1", "http://cb", "alice", "alice-pw").unwrap();
        let tokens = idp.redeem(&code, "b1", Some("http://cb"), "s", true).unwrap();
        let claims: IdpIdClaims = TokenCodec::new(b"s").verify(&tokens.id_token).unwrap();
        assert_eq!(claims.sub, "alice@inst-x");
        assert_eq!(claims.institution, "urn:inst:X");
        let err = idp.redeem(&code, "b1", None, "s", true).unwrap_err();
        assert_eq!(err.code, ErrorCode::AccessDenied);
    }

    #[test]
    fn rejects_bad_password_secret_and_stale_code() {
        let (idp, clock) = idp();
        assert_eq!(idp.authorize("b1", "r", "alice", "nope").unwrap_err().code, ErrorCode::AccessDenied);
        assert_eq!(idp.authorize("b1", "r", "mallory", "x").unwrap_err().code, ErrorCode::AccessDenied);
        let code = idp.authorize("b1", "r", "bob", "bob-pw").unwrap();
        assert_eq!(idp.redeem(&code, "b1", None, "s", false).unwrap_err().code, ErrorCode::AccessDenied);
        let code = idp.authorize("b1", "r", "bob", "bob-pw").unwrap();
        assert_eq!(idp.redeem(&code, "b2", None, "s", true).unwrap_err().code, ErrorCode::AccessDenied);
        let code = idp.authorize("b1", "r", "bob", "bob-pw").unwrap();
        clock.advance(CODE_TTL_S);
        assert_eq!(idp.redeem(&code, "b1", None, "s", true).unwrap_err().code, ErrorCode::AccessDenied);
    }

    #[test]
    fn persona_script_parses() {
        let p = Persona::load(r#"[{"username":"u","password":"p","subject":"s","email":"e@x.y","institution":"i"}]"#).unwrap();
        assert_eq!(p[0].subject, "s");
        assert!(Persona::load("{").is_err());
    }
}
