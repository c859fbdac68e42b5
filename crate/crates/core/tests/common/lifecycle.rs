//! Plain state-machine model of the tenant lifecycle, replayed in lockstep
//! against the service. Every call's accept/reject outcome (and error code)
//! must match the model.

use rand::Rng;
use tenet_core::id::{IdKind, OpaqueId};
use tenet_core::tenant::{Decision, DeactivationAuthority, TenantKind, TenantProfile, TenantStatus};
use tenet_core::{ClientCredentials, ErrorCode};

use super::fixture::{fixture, profile, OPERATOR_KEY};

const MAX_DEPTH: usize = 4;

#[derive(Debug, Clone)]
pub enum Op {
    Request { valid: bool },
    Decide { t: usize, approve: bool, good_key: bool },
    CreateChild { parent: usize, good_secret: bool },
    DeactivateByOperator { t: usize, good_key: bool },
    DeactivateByParent { t: usize, actor: usize },
    Rotate { t: usize },
    Authenticate { t: usize, stale: bool },
}

pub fn random_op(rng: &mut impl Rng) -> Op {
    let t = rng.random_range(0..64);
    match rng.random_range(0..10) {
        0 | 1 => Op::Request { valid: rng.random_bool(0.9) },
        2 | 3 => Op::Decide { t, approve: rng.random_bool(0.7), good_key: rng.random_bool(0.85) },
        4 | 5 => Op::CreateChild { parent: t, good_secret: rng.random_bool(0.9) },
        6 => Op::DeactivateByOperator { t, good_key: rng.random_bool(0.8) },
        7 => Op::DeactivateByParent { t, actor: rng.random_range(0..64) },
        8 => Op::Rotate { t },
        _ => Op::Authenticate { t, stale: rng.random_bool(0.2) },
    }
}

pub fn random_sequence(rng: &mut impl Rng) -> Vec<Op> {
    let n = rng.random_range(5..40);
    (0..n).map(|_| random_op(rng)).collect()
}

#[derive(Debug, Clone)]
struct ModelTenant {
    id: OpaqueId,
    parent: Option<usize>,
    kind: TenantKind,
    status: TenantStatus,
    depth: usize,
    creds: Option<ClientCredentials>,
    stale: Option<ClientCredentials>,
    approved: bool,
}

struct Model {
    tenants: Vec<ModelTenant>,
}

impl Model {
    fn chain_active(&self, i: usize) -> bool {
        let mut cur = Some(i);
        while let Some(c) = cur {
            if self.tenants[c].status != TenantStatus::Active {
                return false;
            }
            cur = self.tenants[c].parent;
        }
        true
    }

    /// Expected outcome of authenticating with tenant `i`'s current creds.
    fn auth_outcome(&self, i: usize, good_secret: bool) -> Result<(), ErrorCode> {
        if self.tenants[i].creds.is_none() || !good_secret {
            return Err(ErrorCode::InvalidClient);
        }
        if !self.chain_active(i) {
            return Err(ErrorCode::TenantInactive);
        }
        Ok(())
    }

    fn creds_for(&self, i: usize, good_secret: bool) -> ClientCredentials {
        match &self.tenants[i].creds {
            Some(c) if good_secret => c.clone(),
            Some(c) => ClientCredentials::new(c.client_id.clone(), "wrong-secret"),
            None => ClientCredentials::new(OpaqueId::generate(IdKind::Client).to_string(), "x"),
        }
    }
}

fn code<T>(r: &tenet_core::Result<T>) -> Result<(), ErrorCode> {
    match r {
        Ok(_) => Ok(()),
        Err(e) => Err(e.code),
    }
}

fn check(step: usize, op: &Op, got: Result<(), ErrorCode>, want: Result<(), ErrorCode>) -> Result<(), String> {
    if got != want {
        return Err(format!("step {step} {op:?}: service {got:?}, model {want:?}"));
    }
    Ok(())
}

/// Replays `ops` against a fresh service and the model.
pub fn run(ops: &[Op]) -> Result<(), String> {
    let f = fixture();
    let tenet = &f.tenet;
    let mut m = Model { tenants: Vec::new() };

    for (step, op) in ops.iter().enumerate() {
        let pick = |t: usize| (!m.tenants.is_empty()).then(|| t % m.tenants.len());
        match *op {
            Op::Request { valid } => {
                let p = if valid {
                    profile(&format!("Admin {step}"))
                } else {
                    TenantProfile { name: "   ".into(), ..profile("x") }
                };
                let r = tenet.request_admin_tenant(p);
                let want = if valid { Ok(()) } else { Err(ErrorCode::ValidationError) };
                check(step, op, code(&r), want)?;
                if let Ok(id) = r {
                    m.tenants.push(ModelTenant {
                        id,
                        parent: None,
                        kind: TenantKind::Admin,
                        status: TenantStatus::Requested,
                        depth: 1,
                        creds: None,
                        stale: None,
                        approved: false,
                    });
                }
            }
            Op::Decide { t, approve, good_key } => {
                let Some(i) = pick(t) else { continue };
                let key = if good_key { OPERATOR_KEY } else { "not-the-key" };
                let decision = if approve { Decision::Approve } else { Decision::Deny };
                let r = tenet.decide_tenant_request(key, &m.tenants[i].id, decision);
                let want = if !good_key {
                    Err(ErrorCode::AccessDenied)
                } else if m.tenants[i].status != TenantStatus::Requested {
                    Err(ErrorCode::Conflict)
                } else {
                    Ok(())
                };
                check(step, op, code(&r), want)?;
                if let Ok(creds) = r {
                    let mt = &mut m.tenants[i];
                    if approve {
                        mt.status = TenantStatus::Active;
                        mt.approved = true;
                        mt.creds = Some(creds.ok_or("approval returned no credentials")?.as_client());
                    } else {
                        if creds.is_some() {
                            return Err(format!("step {step}: denial returned credentials"));
                        }
                        mt.status = TenantStatus::Denied;
                    }
                }
            }
            Op::CreateChild { parent, good_secret } => {
                let Some(p) = pick(parent) else { continue };
                let creds = m.creds_for(p, good_secret);
                let r = tenet.create_child_tenant(&creds, profile(&format!("Child {step}")));
                let want = m.auth_outcome(p, good_secret).and_then(|()| {
                    if m.tenants[p].depth + 1 > MAX_DEPTH {
                        Err(ErrorCode::ValidationError)
                    } else {
                        Ok(())
                    }
                });
                check(step, op, code(&r), want)?;
                if let Ok((id, child_creds)) = r {
                    m.tenants.push(ModelTenant {
                        id,
                        parent: Some(p),
                        kind: TenantKind::Child,
                        status: TenantStatus::Active,
                        depth: m.tenants[p].depth + 1,
                        creds: Some(child_creds.as_client()),
                        stale: None,
                        approved: false,
                    });
                }
            }
            Op::DeactivateByOperator { t, good_key } => {
                let Some(i) = pick(t) else { continue };
                let key = if good_key { OPERATOR_KEY } else { "nope" };
                let r = tenet.deactivate_tenant(&DeactivationAuthority::Operator(key.into()), &m.tenants[i].id);
                let want = if !good_key {
                    Err(ErrorCode::AccessDenied)
                } else if m.tenants[i].status != TenantStatus::Active {
                    Err(ErrorCode::Conflict)
                } else {
                    Ok(())
                };
                check(step, op, code(&r), want)?;
                if r.is_ok() {
                    m.tenants[i].status = TenantStatus::Deactivated;
                }
            }
            Op::DeactivateByParent { t, actor } => {
                let Some(i) = pick(t) else { continue };
                let a = actor % m.tenants.len();
                let creds = m.creds_for(a, true);
                let r = tenet.deactivate_tenant(&DeactivationAuthority::Parent(creds), &m.tenants[i].id);
                let want = match m.auth_outcome(a, true) {
                    Err(ErrorCode::InvalidClient) => Err(ErrorCode::InvalidClient),
                    Err(_) => Err(ErrorCode::AccessDenied),
                    Ok(()) if m.tenants[i].parent != Some(a) => Err(ErrorCode::AccessDenied),
                    Ok(()) if m.tenants[i].status != TenantStatus::Active => Err(ErrorCode::Conflict),
                    Ok(()) => Ok(()),
                };
                check(step, op, code(&r), want)?;
                if r.is_ok() {
                    m.tenants[i].status = TenantStatus::Deactivated;
                }
            }
            Op::Rotate { t } => {
                let Some(i) = pick(t) else { continue };
                let creds = m.creds_for(i, true);
                let r = tenet.rotate_credentials(&creds, &m.tenants[i].id);
                check(step, op, code(&r), m.auth_outcome(i, true))?;
                if let Ok(new) = r {
                    let new = new.as_client();
                    if new.client_id != creds.client_id {
                        return Err(format!("step {step}: rotation changed the client id"));
                    }
                    m.tenants[i].stale = m.tenants[i].creds.replace(new);
                }
            }
            Op::Authenticate { t, stale } => {
                let Some(i) = pick(t) else { continue };
                let (creds, good) = match (&m.tenants[i].stale, stale) {
                    (Some(old), true) => (old.clone(), false),
                    _ => (m.creds_for(i, true), true),
                };
                let r = tenet.authenticate_client(&creds);
                check(step, op, code(&r), m.auth_outcome(i, good))?;
                if let Ok(ctx) = r {
                    if ctx.ancestor_path.len() != m.tenants[i].depth {
                        return Err(format!("step {step}: ancestor path length mismatch"));
                    }
                }
            }
        }
    }

    // final state, approval gate and forest shape
    let audit = tenet.audit_log().map_err(|e| e.to_string())?;
    for (i, mt) in m.tenants.iter().enumerate() {
        let t = tenet.get_tenant(&mt.id).map_err(|e| e.to_string())?;
        if t.status != mt.status || t.kind != mt.kind {
            return Err(format!("tenant {i}: service {:?}/{:?}, model {:?}/{:?}", t.kind, t.status, mt.kind, mt.status));
        }
        let ever_active = matches!(t.status, TenantStatus::Active | TenantStatus::Deactivated);
        if t.kind == TenantKind::Admin && ever_active {
            let approved = audit
                .iter()
                .any(|a| a.action == "approve_tenant" && a.outcome == "ok" && a.tenant_id.as_ref() == Some(&mt.id));
            if !approved || !mt.approved {
                return Err(format!("admin tenant {i} became active without an approval event"));
            }
        }
        if t.kind == TenantKind::Child && t.status == TenantStatus::Requested {
            return Err(format!("child tenant {i} is in REQUESTED"));
        }
        let mut hops = 0;
        let mut cur = t.clone();
        while let Some(p) = cur.parent_id.clone() {
            hops += 1;
            if hops > MAX_DEPTH - 1 {
                return Err(format!("tenant {i}: parent chain longer than {}", MAX_DEPTH - 1));
            }
            cur = tenet.get_tenant(&p).map_err(|e| e.to_string())?;
        }
        if cur.kind != TenantKind::Admin {
            return Err(format!("tenant {i}: root is not an admin tenant"));
        }
    }
    Ok(())
}
