//! Compact HMAC-SHA256 token encoding.
//!
//! `base64url(header) . base64url(claims) . base64url(mac)`, no padding,
//! where the header is fixed to `{"alg":"HS256","typ":"JWT"}`, claims are
//! canonical JSON (sorted keys) and the MAC covers the first two parts.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::clock::Timestamp;
use crate::error::{Error, Result};
use crate::id::{EntityRef, OpaqueId};

pub const HEADER_JSON: &str = r#"{"alg":"HS256","typ":"JWT"}"#;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenType {
    Access,
    Id,
    Refresh,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantType {
    ClientCredentials,
    RefreshToken,
    AuthorizationCode,
}

impl GrantType {
    pub fn as_str(self) -> &'static str {
        match self {
            GrantType::ClientCredentials => "client_credentials",
            GrantType::RefreshToken => "refresh_token",
            GrantType::AuthorizationCode => "authorization_code",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenClaims {
    pub iss: String,
    pub sub: EntityRef,
    pub aud: String,
    pub typ: TokenType,
    pub iat: Timestamp,
    pub exp: Timestamp,
    pub jti: OpaqueId,
    pub roles: Vec<String>,
    pub amr: GrantType,
}

pub fn issuer_for(tenant_id: &OpaqueId) -> String {
    format!("tenet/{tenant_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub access_token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_token: Option<String>,
    pub token_type: String,
    pub expires_in: u64,
}

#[derive(Clone)]
pub struct TokenCodec {
    key: Vec<u8>,
}

impl std::fmt::Debug for TokenCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenCodec(<key>)")
    }
}

impl TokenCodec {
    pub fn new(key: &[u8]) -> Self {
        TokenCodec { key: key.to_vec() }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length")
    }

    pub fn sign<T: Serialize>(&self, claims: &T) -> String {
        // Value maps are BTreeMaps, so this serialization has sorted keys.
        let canonical = serde_json::to_value(claims)
            .and_then(|v| serde_json::to_vec(&v))
            .expect("claims serialize to JSON");
        let mut token = URL_SAFE_NO_PAD.encode(HEADER_JSON);
        token.push('.');
        token.push_str(&URL_SAFE_NO_PAD.encode(canonical));
        let mut mac = self.mac();
        mac.update(token.as_bytes());
        let tag = mac.finalize().into_bytes();
        token.push('.');
        token.push_str(&URL_SAFE_NO_PAD.encode(tag));
        token
    }

    /// Verifies format and MAC, then decodes the claims. Expiry and
    /// revocation are the caller's business.
    pub fn verify<T: DeserializeOwned>(&self, token: &str) -> Result<T> {
        let bad = |why: &str| Error::invalid_token(format!("malformed or forged token: {why}"));
        let mut parts = token.split('.');
        let (Some(header), Some(body), Some(tag), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad("expected three parts"));
        };
        if header != URL_SAFE_NO_PAD.encode(HEADER_JSON) {
            return Err(bad("unexpected header"));
        }
        let tag = URL_SAFE_NO_PAD.decode(tag).map_err(|_| bad("signature encoding"))?;
        let mut mac = self.mac();
        mac.update(&token.as_bytes()[..header.len() + 1 + body.len()]);
        mac.verify_slice(&tag).map_err(|_| bad("signature mismatch"))?;
        let json = URL_SAFE_NO_PAD.decode(body).map_err(|_| bad("claims encoding"))?;
        serde_json::from_slice(&json).map_err(|_| bad("claims"))
    }
}
