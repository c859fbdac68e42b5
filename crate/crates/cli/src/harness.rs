//! Scenario runner. A scenario is a setup phase plus numbered steps; each
//! step plays one actor's move against the live service, with the external
//! actors (gateways, capsule host, MFT, agents, storage) faked in process.
//!
//! Artifacts are the values that pass between actors. Any one of them can
//! be corrupted right after it is produced; the step that first consumes it
//! must then be the first to fail.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use tenet_core::id::EntityRef;
use tenet_core::tenant::TenantProfile;

use crate::client::{Auth, Client, ClientError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub index: usize,
    pub description: &'static str,
    pub request: String,
    pub outcome: Outcome,
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Transcript {
    pub scenario: &'static str,
    pub setup_error: Option<String>,
    pub steps: Vec<StepRecord>,
    /// Number of numbered steps the scenario defines.
    pub expected_steps: usize,
}

impl Transcript {
    pub fn passed(&self) -> bool {
        self.setup_error.is_none()
            && self.steps.len() == self.expected_steps
            && self.steps.iter().all(|s| s.outcome == Outcome::Pass)
    }

    pub fn first_failure(&self) -> Option<usize> {
        self.steps.iter().find(|s| s.outcome == Outcome::Fail).map(|s| s.index)
    }

    /// `STEP <n> <PASS|FAIL> <description>` lines.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = writeln!(out, "STEP {} {} {}", s.index, s.outcome.as_str(), s.description);
        }
        out
    }

    /// Aligned, human-oriented rendering with request summaries.
    pub fn render(&self) -> String {
        let mut out = format!("scenario {}\n", self.scenario);
        if let Some(e) = &self.setup_error {
            let _ = writeln!(out, "SETUP FAIL {e}");
        }
        let width = self.steps.iter().map(|s| s.description.len()).max().unwrap_or(0);
        for s in &self.steps {
            let _ = writeln!(
                out,
                "STEP {:>2} {} {:<width$}  {}",
                s.index,
                s.outcome.as_str(),
                s.description,
                s.request
            );
            if let Some(d) = &s.detail {
                let _ = writeln!(out, "        {d}");
            }
        }
        let passed = self.steps.iter().filter(|s| s.outcome == Outcome::Pass).count();
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "RESULT {verdict} {passed}/{}", self.expected_steps);
        out
    }
}

/// The service under test.
#[derive(Clone)]
pub struct Env {
    pub client: Client,
    pub operator_key: String,
}

impl Env {
    pub fn new(base_url: &str, operator_key: &str) -> Env {
        Env { client: Client::new(base_url), operator_key: operator_key.to_string() }
    }
}

/// Scratch state for one run: the artifacts and the fakes' bookkeeping.
pub struct Ctx {
    /// Distinguishes names when several runs share one service.
    pub run: String,
    vars: BTreeMap<String, String>,
    request: String,
}

impl Ctx {
    fn new() -> Ctx {
        let run: u32 = rand::rng().random();
        Ctx { run: format!("{run:08x}"), vars: BTreeMap::new(), request: String::new() }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.vars.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str, String> {
        self.vars
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| format!("nothing recorded for {key}"))
    }

    /// Summary of the request the current step is making.
    pub fn request(&mut self, summary: impl Into<String>) {
        self.request = summary.into();
    }

    /// Tenant credentials saved by [`Ctx::admin_tenant`].
    pub fn basic(&self, prefix: &str) -> Result<Auth, String> {
        Ok(Auth::basic(self.get(&format!("{prefix}.client_id"))?, self.get(&format!("{prefix}.secret"))?))
    }

    pub fn bearer(&self, key: &str) -> Result<Auth, String> {
        Ok(Auth::Bearer(self.get(key)?.to_string()))
    }

    pub fn entity(&self, key: &str) -> Result<EntityRef, String> {
        EntityRef::parse(self.get(key)?).map_err(|e| e.to_string())
    }

    /// An approved admin tenant, recorded under `prefix.{id,client_id,secret}`
    /// along with its entity reference at `prefix.entity`.
    pub fn admin_tenant(&mut self, env: &Env, prefix: &str, name: &str, redirects: &[&str]) -> Result<(), String> {
        let profile = TenantProfile {
            name: format!("{name} {}", self.run),
            contact_email: format!("admin@{prefix}.example"),
            redirect_uris: redirects.iter().map(|s| s.to_string()).collect(),
            description: String::new(),
        };
        let (id, creds) = env.client.admin_tenant(&env.operator_key, &profile).map_err(api)?;
        self.set(&format!("{prefix}.id"), &id);
        self.set(&format!("{prefix}.client_id"), &creds.client_id);
        self.set(&format!("{prefix}.secret"), &creds.client_secret);
        self.set(&format!("{prefix}.entity"), EntityRef::tenant(&id));
        Ok(())
    }

    /// Registers the service's built-in mock IdP under `alias`.
    pub fn mock_idp(&mut self, env: &Env, tenant: &str, alias: &str) -> Result<(), String> {
        let base = env.client.base_url();
        let broker_id = format!("{alias}-broker-{}", self.run);
        let broker_secret = format!("{alias}-{:032x}", rand::rng().random::<u128>());
        let idp = tenet_core::idp::NewIdp {
            alias: alias.to_string(),
            authorize_endpoint: format!("{base}/mockidp/authorize"),
            token_endpoint: format!("{base}/mockidp/token"),
            broker_client_id: broker_id.clone(),
            broker_client_secret: broker_secret,
            entity_id_param: "idphint".to_string(),
        };
        env.client.register_idp(&self.basic(tenant)?, &idp).map_err(api)?;
        self.set(&format!("idp.{alias}.broker"), broker_id);
        self.set(&format!("idp.{alias}.authorize"), idp.authorize_endpoint);
        Ok(())
    }
}

/// Renders a client error as step detail.
pub fn api(e: ClientError) -> String {
    e.to_string()
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub type StepFn = fn(&Env, &mut Ctx) -> Result<(), String>;

pub struct Step {
    pub description: &'static str,
    pub run: StepFn,
}

pub enum Corruption {
    /// Alter one character of the recorded value.
    Tamper,
    /// Change the artifact on the service side (delete, revoke, rewrite).
    Server(StepFn),
}

pub struct Artifact {
    pub name: &'static str,
    /// Step that produces it; 0 for setup.
    pub produced_by: usize,
    /// First step that presents or checks it.
    pub consumed_by: usize,
    pub corruption: Corruption,
}

pub struct Scenario {
    pub name: &'static str,
    pub setup: StepFn,
    pub steps: &'static [Step],
    pub artifacts: &'static [Artifact],
}

/// Changes the middle character so the value keeps its shape.
pub fn tamper(value: &str) -> String {
    let mut chars: Vec<char> = value.chars().collect();
    let mid = chars.len() / 2;
    let pos = (mid..chars.len())
        .chain(0..mid)
        .find(|&i| chars[i].is_ascii_alphanumeric())
        .unwrap_or(mid.min(chars.len().saturating_sub(1)));
    if let Some(c) = chars.get_mut(pos) {
        *c = if *c == 'a' { 'b' } else { 'a' };
    }
    chars.into_iter().collect()
}

fn corrupt(env: &Env, ctx: &mut Ctx, a: &Artifact) -> Result<(), String> {
    match a.corruption {
        Corruption::Tamper => {
            let v = tamper(ctx.get(a.name)?);
            ctx.set(a.name, v);
            Ok(())
        }
        Corruption::Server(f) => f(env, ctx),
    }
}

impl Scenario {
    pub fn run(&self, env: &Env) -> Transcript {
        self.run_with_fault(env, None)
    }

    /// Runs the scenario, corrupting the named artifact as soon as it
    /// exists. FAIL at any step halts the run.
    pub fn run_with_fault(&self, env: &Env, fault: Option<&str>) -> Transcript {
        let mut t = Transcript { scenario: self.name, setup_error: None, steps: Vec::new(), expected_steps: self.steps.len() };
        let fault = match fault.map(|f| self.artifacts.iter().find(|a| a.name == f)) {
            Some(None) => {
                t.setup_error = Some(format!("{} has no artifact {:?}", self.name, fault.unwrap_or_default()));
                return t;
            }
            Some(a) => a,
            None => None,
        };
        let mut ctx = Ctx::new();
        let setup = (self.setup)(env, &mut ctx).and_then(|()| match fault {
            Some(a) if a.produced_by == 0 => corrupt(env, &mut ctx, a).map_err(|e| format!("corrupting {}: {e}", a.name)),
            _ => Ok(()),
        });
        if let Err(e) = setup {
            t.setup_error = Some(e);
            return t;
        }
        for (i, step) in self.steps.iter().enumerate() {
            let index = i + 1;
            ctx.request.clear();
            let mut result = (step.run)(env, &mut ctx);
            if let (Ok(()), Some(a)) = (&result, fault) {
                if a.produced_by == index {
                    result = corrupt(env, &mut ctx, a).map_err(|e| format!("harness could not corrupt {}: {e}", a.name));
                }
            }
            let outcome = if result.is_ok() { Outcome::Pass } else { Outcome::Fail };
            t.steps.push(StepRecord {
                index,
                description: step.description,
                request: std::mem::take(&mut ctx.request),
                outcome,
                detail: result.err(),
            });
            if outcome == Outcome::Fail {
                break;
            }
        }
        t
    }

    /// One run per artifact, each with that artifact corrupted.
    pub fn fault_sweep(&self, env: &Env) -> Vec<FaultCase> {
        self.artifacts
            .iter()
            .map(|a| {
                let t = self.run_with_fault(env, Some(a.name));
                let localized = t.setup_error.is_none()
                    && t.steps.len() == a.consumed_by
                    && t.first_failure() == Some(a.consumed_by);
                FaultCase { artifact: a.name, expected_step: a.consumed_by, first_failure: t.first_failure(), localized, transcript: t }
            })
            .collect()
    }
}

pub struct FaultCase {
    pub artifact: &'static str,
    pub expected_step: usize,
    pub first_failure: Option<usize>,
    /// Every step before the consumer passed and the consumer failed.
    pub localized: bool,
    pub transcript: Transcript,
}
