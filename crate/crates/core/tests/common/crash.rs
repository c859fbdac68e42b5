//! Crash recovery runs. A deterministic transfer workload commits against a
//! durable store; after a crash the recovered state must equal the state
//! after some prefix of the workload that includes every acknowledged commit
//! (and at most the one in flight), and the store must accept new writes.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tenet_core::store::{CrashPoint, Store, StoreOptions};

pub const ACCOUNTS: usize = 8;
pub const OPENING_BALANCE: i64 = 1000;
pub const CHILD_ENV: &str = "TENET_KILL_CHILD_DIR";
const SEED_ENV: &str = "TENET_KILL_CHILD_SEED";

type State = BTreeMap<(String, String), Value>;

#[derive(Debug, Clone, Copy)]
struct Transfer {
    from: usize,
    to: usize,
    amount: i64,
}

/// Commit `n` of the workload (0 is the genesis commit).
struct Workload {
    rng: StdRng,
    n: u64,
}

impl Workload {
    fn new(seed: u64) -> Workload {
        Workload { rng: StdRng::seed_from_u64(seed), n: 0 }
    }

    fn next(&mut self) -> Option<Transfer> {
        self.n += 1;
        if self.n == 1 {
            return None;
        }
        let from = self.rng.random_range(0..ACCOUNTS);
        let to = (from + self.rng.random_range(1..ACCOUNTS)) % ACCOUNTS;
        Some(Transfer { from, to, amount: self.rng.random_range(1..300) })
    }
}

fn acct(i: usize) -> String {
    format!("a{i}")
}

fn commit(store: &Store, n: u64, t: Option<Transfer>) -> tenet_core::Result<()> {
    store.transact(|txn| {
        match t {
            None => {
                for i in 0..ACCOUNTS {
                    txn.put("accounts", &acct(i), &OPENING_BALANCE)?;
                }
            }
            Some(t) => {
                let from: i64 = txn.get("accounts", &acct(t.from))?.unwrap_or(0);
                let to: i64 = txn.get("accounts", &acct(t.to))?.unwrap_or(0);
                txn.put("accounts", &acct(t.from), &(from - t.amount))?;
                txn.put("accounts", &acct(t.to), &(to + t.amount))?;
            }
        }
        txn.put("journal", &format!("{n:08}"), &json!({ "n": n }))
    })
}

fn apply(state: &mut State, n: u64, t: Option<Transfer>) {
    let key = |i| ("accounts".to_string(), acct(i));
    match t {
        None => {
            for i in 0..ACCOUNTS {
                state.insert(key(i), json!(OPENING_BALANCE));
            }
        }
        Some(t) => {
            let bal = |s: &State, i| s.get(&key(i)).and_then(Value::as_i64).unwrap_or(0);
            let (from, to) = (bal(state, t.from), bal(state, t.to));
            state.insert(key(t.from), json!(from - t.amount));
            state.insert(key(t.to), json!(to + t.amount));
        }
    }
    state.insert(("journal".into(), format!("{n:08}")), json!({ "n": n }));
}

/// States after 0, 1, .., `n` commits of the seeded workload.
fn model(seed: u64, n: u64) -> Vec<State> {
    let mut w = Workload::new(seed);
    let mut states = vec![State::new()];
    for _ in 0..n {
        let t = w.next();
        let mut s = states.last().unwrap().clone();
        apply(&mut s, w.n, t);
        states.push(s);
    }
    states
}

fn observed(store: &Store) -> State {
    store
        .records()
        .into_iter()
        .map(|r| ((r.collection, r.key), r.value))
        .collect()
}

fn check_sum(state: &State) -> Result<(), String> {
    let balances: Vec<i64> = state
        .iter()
        .filter(|((c, _), _)| c == "accounts")
        .filter_map(|(_, v)| v.as_i64())
        .collect();
    if balances.is_empty() {
        return Ok(());
    }
    let sum: i64 = balances.iter().sum();
    if balances.len() != ACCOUNTS || sum != ACCOUNTS as i64 * OPENING_BALANCE {
        return Err(format!("conservation broken: {} accounts summing to {sum}", balances.len()));
    }
    Ok(())
}

/// Which prefix of the workload the recovered store holds.
fn identify(store: &Store, states: &[State], acked: u64, allow_inflight: bool) -> Result<u64, String> {
    let got = observed(store);
    check_sum(&got)?;
    let m = store.last_txn();
    let max = if allow_inflight { acked + 1 } else { acked };
    if m < acked || m > max {
        return Err(format!("recovered txn {m}, acknowledged {acked}"));
    }
    if states[m as usize] != got {
        return Err(format!("recovered state is not the state after commit {m}"));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy)]
pub enum Kill {
    TornAppend,
    AfterAppend,
    TornSnapshot,
    SnapshotBeforeTruncate,
}

pub const KILLS: [Kill; 4] = [Kill::TornAppend, Kill::AfterAppend, Kill::TornSnapshot, Kill::SnapshotBeforeTruncate];

/// One in-process run: commit, snapshot now and then, crash at the chosen
/// point, recover, verify, keep writing, recover again, verify.
pub fn kill_point_run(dir: &Path, seed: u64, kill: Kill) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e37_79b9);
    let before = rng.random_range(1..60u64);
    let after = rng.random_range(1..20u64);
    let states = model(seed, before + 1 + after + 1);
    let opts = StoreOptions { sync: true };
    let err = |e: tenet_core::Error| e.to_string();

    let store = Store::open(dir, opts.clone()).map_err(err)?;
    let mut w = Workload::new(seed);
    let mut acked = 0;
    for _ in 0..before {
        let t = w.next();
        commit(&store, w.n, t).map_err(err)?;
        acked = w.n;
        if rng.random_bool(0.1) {
            store.snapshot().map_err(err)?;
        }
    }
    let inflight = match kill {
        Kill::TornAppend | Kill::AfterAppend => {
            let point = match kill {
                Kill::TornAppend => CrashPoint::TornAppend { keep_bytes: rng.random_range(0..400) },
                _ => CrashPoint::AfterAppend,
            };
            store.inject_crash(point);
            let t = w.next();
            if commit(&store, w.n, t).is_ok() {
                return Err("commit succeeded through an injected crash".into());
            }
            true
        }
        Kill::TornSnapshot | Kill::SnapshotBeforeTruncate => {
            let point = match kill {
                Kill::TornSnapshot => CrashPoint::TornSnapshot { keep_bytes: rng.random_range(0..2000) },
                _ => CrashPoint::SnapshotBeforeTruncate,
            };
            store.inject_crash(point);
            if store.snapshot().is_ok() {
                return Err("snapshot succeeded through an injected crash".into());
            }
            false
        }
    };
    if commit(&store, 0, None).is_ok() {
        return Err("store accepted writes after a crash".into());
    }
    drop(store);

    let store = Store::open(dir, opts.clone()).map_err(|e| format!("recovery failed: {e}"))?;
    let m = identify(&store, &states, acked, inflight)?;

    // resume the workload from wherever recovery landed
    let mut w = Workload::new(seed);
    for _ in 0..m {
        w.next();
    }
    for _ in 0..after {
        let t = w.next();
        commit(&store, w.n, t).map_err(|e| format!("write after recovery: {e}"))?;
    }
    let total = w.n;
    drop(store);
    let store = Store::open(dir, opts).map_err(|e| format!("second recovery failed: {e}"))?;
    identify(&store, &states, total, false)?;
    Ok(())
}

/// Body of the child process: run the workload forever, acknowledging each
/// commit on stdout. Returns false when not running as a child.
pub fn child_entry() -> bool {
    let Ok(dir) = std::env::var(CHILD_ENV) else {
        return false;
    };
    let seed: u64 = std::env::var(SEED_ENV).ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    let store = Store::open(&dir, StoreOptions { sync: true }).expect("child open");
    let mut w = Workload::new(seed);
    let mut out = std::io::stdout();
    for _ in 0..1_000_000 {
        let t = w.next();
        commit(&store, w.n, t).expect("child commit");
        writeln!(out, "ACK {}", w.n).unwrap();
        out.flush().unwrap();
        if w.n % 16 == 0 {
            store.snapshot().expect("child snapshot");
        }
    }
    true
}

/// Spawns this test binary running only `child_test`, SIGKILLs it after a
/// random number of acknowledgements, then recovers and verifies. Returns
/// the number of commits the child had acknowledged.
pub fn sigkill_run(child_test: &str, dir: &Path, seed: u64) -> Result<u64, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let target = rng.random_range(1..120u64);
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let mut child = Command::new(exe)
        .args(["--exact", child_test, "--nocapture", "--test-threads=1"])
        .env(CHILD_ENV, dir)
        .env(SEED_ENV, seed.to_string())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let stdout = child.stdout.take().unwrap();
    let mut acked = 0;
    for line in BufReader::new(stdout).lines() {
        let Ok(line) = line else { break };
        if let Some(n) = line.strip_prefix("ACK ") {
            acked = n.trim().parse().map_err(|_| format!("bad ack line {line:?}"))?;
            if acked >= target {
                break;
            }
        }
    }
    std::thread::sleep(Duration::from_micros(rng.random_range(0..2000)));
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;
    if acked < target {
        return Err(format!("child exited after {acked} acknowledgements"));
    }

    let store = Store::open(dir, StoreOptions { sync: true }).map_err(|e| format!("recovery failed: {e}"))?;
    let m = store.last_txn();
    if m < acked {
        return Err(format!("lost acknowledged commits: recovered {m}, acked {acked}"));
    }
    let states = model(seed, m + 1);
    identify(&store, &states, m, false)?;
    commit(&store, m + 1, Workload::new(seed).nth(m)).map_err(|e| format!("write after recovery: {e}"))?;
    Ok(acked)
}

impl Workload {
    /// The transfer for commit `n + 1`.
    fn nth(mut self, n: u64) -> Option<Transfer> {
        for _ in 0..n {
            self.next();
        }
        self.next()
    }
}
