//! Token checks against an HMAC-SHA256 written out from its definition
//! (sha2 only, no hmac crate) and a separate base64url decoder.

use data_encoding::BASE64URL_NOPAD;
use rand::Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tenet_core::oauth::{ClientKind, Lifetimes, MAX_LIFETIME_S, MIN_LIFETIME_S};
use tenet_core::token::{TokenClaims, TokenResponse, TokenType};
use tenet_core::{ClientCredentials, ErrorCode};

use super::fixture::{fixture, Fixture};

const BLOCK: usize = 64;

pub fn hmac_sha256(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut k = [0u8; BLOCK];
    if key.len() > BLOCK {
        k[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let pad = |byte: u8| k.map(|b| b ^ byte);
    let inner = Sha256::new().chain_update(pad(0x36)).chain_update(msg).finalize();
    Sha256::new().chain_update(pad(0x5c)).chain_update(inner).finalize().into()
}

/// Independent verifier: three parts, fixed header, MAC over the signing
/// input, claims as JSON. None on any failure.
pub fn oracle_verify(key: &[u8], token: &str) -> Option<Value> {
    let parts: Vec<&str> = token.split('.').collect();
    let [header, body, tag] = parts[..] else { return None };
    let header_json: Value = serde_json::from_slice(&BASE64URL_NOPAD.decode(header.as_bytes()).ok()?).ok()?;
    if header_json != serde_json::json!({"alg": "HS256", "typ": "JWT"}) {
        return None;
    }
    let tag = BASE64URL_NOPAD.decode(tag.as_bytes()).ok()?;
    let want = hmac_sha256(key, format!("{header}.{body}").as_bytes());
    if tag != want {
        return None;
    }
    serde_json::from_slice(&BASE64URL_NOPAD.decode(body.as_bytes()).ok()?).ok()
}

/// The signing key the fixture configures.
pub const KEY: [u8; 32] = [11u8; 32];

pub struct Principals {
    pub f: Fixture,
    pub tenant: ClientCredentials,
    pub user: TokenResponse,
    pub sa: ClientCredentials,
    pub agent: ClientCredentials,
}

pub fn principals() -> Principals {
    let f = fixture();
    let (_, tenant) = f.admin("Tokens");
    let user = f.login_via(&tenant, Some("mock"), None, "p0", "pw0").unwrap().tokens;
    let (sa_id, sa_secret) = f
        .tenet
        .register_service_account(&tenant, "capsule", vec!["capsule".into()], Default::default())
        .unwrap();
    let (agent_id, agent_secret) = f.tenet.register_agent(&tenant).unwrap();
    Principals {
        f,
        tenant,
        user,
        sa: ClientCredentials::new(sa_id.to_string(), sa_secret),
        agent: ClientCredentials::new(agent_id.to_string(), agent_secret),
    }
}

fn all_tokens(r: &TokenResponse) -> Vec<&str> {
    let mut v = vec![r.access_token.as_str()];
    v.extend(r.id_token.as_deref());
    v.extend(r.refresh_token.as_deref());
    v
}

/// Every issued token verifies under the oracle and its claims agree with
/// what the service validates. Returns the number of tokens checked.
pub fn round_trip(p: &Principals) -> Result<usize, String> {
    let responses = [
        p.user.clone(),
        p.f.tenet.grant_client_credentials(&p.tenant).map_err(|e| e.to_string())?,
        p.f.tenet.grant_client_credentials(&p.sa).map_err(|e| e.to_string())?,
        p.f.tenet.grant_client_credentials(&p.agent).map_err(|e| e.to_string())?,
    ];
    let mut n = 0;
    for r in &responses {
        for token in all_tokens(r) {
            let raw = oracle_verify(&KEY, token).ok_or("oracle rejected an issued token")?;
            let service = p.f.tenet.validate(token, None, None).map_err(|e| e.to_string())?;
            let decoded: TokenClaims = serde_json::from_value(raw).map_err(|e| e.to_string())?;
            if decoded != service {
                return Err("oracle claims differ from validated claims".into());
            }
            n += 1;
        }
    }
    Ok(n)
}

const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_.";

/// Replaces each byte of `token` in turn with a different character and
/// checks both the oracle and the service reject it. Returns positions
/// checked.
pub fn tamper_sweep(p: &Principals, token: &str, rng: &mut impl Rng) -> Result<usize, String> {
    let bytes = token.as_bytes();
    for pos in 0..bytes.len() {
        let mut forged = bytes.to_vec();
        while forged[pos] == bytes[pos] {
            forged[pos] = ALPHABET[rng.random_range(0..ALPHABET.len())];
        }
        let forged = String::from_utf8(forged).unwrap();
        if oracle_verify(&KEY, &forged).is_some() {
            return Err(format!("oracle accepted tamper at {pos}"));
        }
        match p.f.tenet.validate(&forged, None, None) {
            Err(e) if e.code == ErrorCode::InvalidToken => {}
            other => return Err(format!("service gave {other:?} for tamper at {pos}")),
        }
    }
    Ok(bytes.len())
}

pub fn random_lifetimes(rng: &mut impl Rng) -> Lifetimes {
    let mut pick = || rng.random_range(MIN_LIFETIME_S..=MAX_LIFETIME_S);
    Lifetimes { access_lifetime_s: pick(), id_lifetime_s: pick(), refresh_lifetime_s: pick() }
}

fn lifetime_of(token: &str) -> Option<u64> {
    let c = oracle_verify(&KEY, token)?;
    Some(c["exp"].as_u64()? - c["iat"].as_u64()?)
}

/// Configures random lifetimes for every client kind, issues tokens, and
/// checks exp - iat for every token type.
pub fn lifetime_fidelity(p: &Principals, rng: &mut impl Rng) -> Result<(), String> {
    for kind in ClientKind::ALL {
        let l = random_lifetimes(rng);
        p.f.tenet.configure_client(&p.tenant, kind, l).map_err(|e| e.to_string())?;
        let r = match kind {
            ClientKind::UserLogin => {
                p.f.login_via(&p.tenant, Some("mock"), None, "p1", "pw1").map_err(|e| e.to_string())?.tokens
            }
            ClientKind::ServiceAccount => p.f.tenet.grant_client_credentials(&p.sa).map_err(|e| e.to_string())?,
            ClientKind::Agent => p.f.tenet.grant_client_credentials(&p.agent).map_err(|e| e.to_string())?,
        };
        let check = |what: &str, token: Option<&str>, want: u64| -> Result<(), String> {
            let token = token.ok_or(format!("{kind:?}: no {what} token"))?;
            match lifetime_of(token) {
                Some(got) if got == want => Ok(()),
                got => Err(format!("{kind:?} {what}: lifetime {got:?}, configured {want}")),
            }
        };
        check("access", Some(&r.access_token), l.access_lifetime_s)?;
        if r.expires_in != l.access_lifetime_s {
            return Err(format!("{kind:?}: expires_in {} != {}", r.expires_in, l.access_lifetime_s));
        }
        if kind == ClientKind::Agent {
            if r.refresh_token.is_some() {
                return Err("agent received a refresh token".into());
            }
        } else {
            check("id", r.id_token.as_deref(), l.id_lifetime_s)?;
            check("refresh", r.refresh_token.as_deref(), l.refresh_lifetime_s)?;
        }
    }
    Ok(())
}

/// Outcome of each (kind, grant) pair: Ok(()) when tokens were issued.
pub type Matrix = [[Result<(), ErrorCode>; 2]; 3];

/// Agents cannot refresh (no refresh token is issued; presenting the agent
/// token in its place is refused). Everything else succeeds.
pub const EXPECTED_MATRIX: Matrix = [[Ok(()), Ok(())], [Ok(()), Ok(())], [Ok(()), Err(ErrorCode::AccessDenied)]];

pub fn grant_matrix(p: &Principals) -> Matrix {
    let code = |r: tenet_core::Result<TokenResponse>| r.map(|_| ()).map_err(|e| e.code);
    let tenet = &p.f.tenet;
    let mut m: Matrix = [[Ok(()); 2]; 3];
    for (row, kind) in ClientKind::ALL.into_iter().enumerate() {
        let cc = match kind {
            // a user-login client is driven by the tenant's own credentials
            ClientKind::UserLogin => tenet.grant_client_credentials(&p.tenant),
            ClientKind::ServiceAccount => tenet.grant_client_credentials(&p.sa),
            ClientKind::Agent => tenet.grant_client_credentials(&p.agent),
        };
        let refresh_input = match (&cc, kind) {
            // user refresh tokens come from a browser login
            (Ok(_), ClientKind::UserLogin) => {
                p.f.login_via(&p.tenant, Some("mock"), None, "p2", "pw2").ok().and_then(|l| l.tokens.refresh_token)
            }
            (Ok(r), ClientKind::Agent) => Some(r.refresh_token.clone().unwrap_or_else(|| r.access_token.clone())),
            (Ok(r), _) => r.refresh_token.clone(),
            (Err(_), _) => None,
        };
        m[row][0] = code(cc);
        m[row][1] = match refresh_input {
            Some(t) => code(tenet.grant_refresh(&t)),
            None => Err(ErrorCode::InvalidGrant),
        };
    }
    m
}

/// A refresh token works once; the second presentation is refused and the
/// new pair it produced is usable.
pub fn refresh_single_use(p: &Principals) -> Result<(), String> {
    let first = p
        .f
        .login_via(&p.tenant, Some("mock"), None, "p3", "pw3")
        .map_err(|e| e.to_string())?
        .tokens;
    let rt = first.refresh_token.ok_or("login issued no refresh token")?;
    let second = p.f.tenet.grant_refresh(&rt).map_err(|e| format!("first refresh: {e}"))?;
    match p.f.tenet.grant_refresh(&rt) {
        Err(e) if e.code == ErrorCode::AccessDenied => {}
        other => return Err(format!("reused refresh token gave {other:?}")),
    }
    let next = second.refresh_token.ok_or("refresh issued no refresh token")?;
    p.f.tenet.grant_refresh(&next).map_err(|e| format!("chained refresh: {e}"))?;
    let claims = p.f.tenet.validate(&second.access_token, None, Some(TokenType::Access)).map_err(|e| e.to_string())?;
    if claims.amr != tenet_core::token::GrantType::RefreshToken {
        return Err(format!("refreshed token has amr {:?}", claims.amr));
    }
    Ok(())
}
