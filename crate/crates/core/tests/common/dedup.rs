//! Login-log replay: people arrive through either of two IdP aliases (by
//! hint or by institution mapping) and the number of local users must equal
//! the number of distinct (institution, subject) pairs seen.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use tenet_core::id::OpaqueId;
use tenet_core::mockidp::Persona;
use tenet_core::store::Store;
use tenet_core::ErrorCode;

use super::fixture::{fixture_with, mock_idp};

pub const INSTITUTIONS: [&str; 3] = ["urn:inst:A", "urn:inst:B", "urn:inst:C"];

/// Several accounts per person: same (institution, subject) behind
/// different usernames and emails, as when one person holds logins at two
/// IdPs. Subjects also repeat across institutions.
pub fn population() -> Vec<Persona> {
    let mut out = Vec::new();
    for (ii, inst) in INSTITUTIONS.iter().enumerate() {
        for s in 0..4 {
            for account in 0..2 {
                out.push(Persona {
                    username: format!("i{ii}-s{s}-a{account}"),
                    password: "pw".into(),
                    subject: format!("person-{s}"),
                    email: format!("person{s}.{account}@inst{ii}.example"),
                    institution: inst.to_string(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub enum Route {
    Hint(&'static str),
    Institution,
}

#[derive(Debug, Clone)]
pub struct Login {
    pub persona: usize,
    pub route: Route,
    /// Seconds between begin and the IdP login.
    pub delay: u64,
}

pub fn random_log(rng: &mut impl Rng, personas: usize) -> Vec<Login> {
    let n = rng.random_range(1..30);
    (0..n)
        .map(|_| Login {
            persona: rng.random_range(0..personas),
            route: match rng.random_range(0..3) {
                0 => Route::Hint("cilogon"),
                1 => Route::Hint("openathens"),
                _ => Route::Institution,
            },
            delay: if rng.random_bool(0.1) { rng.random_range(600..900) } else { rng.random_range(0..600) },
        })
        .collect()
}

/// Replays the log; returns the number of successful logins.
pub fn replay(log: &[Login]) -> Result<usize, String> {
    let personas = population();
    let f = fixture_with(Store::in_memory(), personas.clone());
    let (_, creds) = f.admin("Gateway");
    f.tenet.register_idp(&creds, mock_idp("cilogon")).unwrap();
    f.tenet.register_idp(&creds, mock_idp("openathens")).unwrap();
    // both aliases serve institutions; the mapping decides for unhinted logins
    f.tenet.map_institution(&creds, INSTITUTIONS[0], "cilogon").unwrap();
    f.tenet.map_institution(&creds, INSTITUTIONS[1], "openathens").unwrap();
    f.tenet.map_institution(&creds, INSTITUTIONS[2], "openathens").unwrap();

    let mut seen: BTreeMap<(String, String), OpaqueId> = BTreeMap::new();
    let mut ok = 0;
    for (i, login) in log.iter().enumerate() {
        let p = &personas[login.persona];
        let (hint, entity) = match login.route {
            Route::Hint(alias) => (Some(alias), None),
            Route::Institution => (None, Some(p.institution.as_str())),
        };
        let redirect = f
            .tenet
            .begin_login(&creds.client_id, hint, entity, super::fixture::REDIRECT, None)
            .map_err(|e| format!("login {i}: begin: {e}"))?;
        // the user lingers at the IdP login page
        f.clock.advance(login.delay);
        let (state, code) = f.browser(&redirect, &p.username, &p.password);
        let r = f
            .tenet
            .complete_login(&state, &code, &tenet_core::idp::InProcessExchange(&f.tenet));
        if login.delay >= tenet_core::idp::SESSION_TTL_S {
            match r {
                Err(e) if e.code == ErrorCode::ExpiredToken => continue,
                other => return Err(format!("login {i}: expired session gave {other:?}")),
            }
        }
        let result = r.map_err(|e| format!("login {i}: {e}"))?;
        ok += 1;
        let key = (p.institution.clone(), p.subject.clone());
        if let Some(prev) = seen.get(&key) {
            if *prev != result.user_id {
                return Err(format!("login {i}: {key:?} mapped to two users"));
            }
        } else {
            if seen.values().any(|u| *u == result.user_id) {
                return Err(format!("login {i}: two people share user {}", result.user_id));
            }
            seen.insert(key, result.user_id);
        }
    }
    let distinct: BTreeSet<_> = seen.keys().collect();
    let users = f.tenet.list_users(&creds).map_err(|e| e.to_string())?;
    if users.len() != distinct.len() {
        return Err(format!("{} users for {} distinct people", users.len(), distinct.len()));
    }
    Ok(ok)
}
