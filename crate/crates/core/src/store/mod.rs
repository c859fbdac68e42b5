//! Crash-safe transactional record store.
//!
//! State is an immutable ordered map swapped atomically on commit, so readers
//! work on a snapshot and never block writers. Transactions are optimistic:
//! each records the versions it read (and the collections it scanned) and is
//! validated against the latest committed state under the commit lock. A
//! validation failure re-runs the transaction closure, up to
//! [`RETRY_BUDGET`] times, before surfacing `CONFLICT`.
//!
//! Durability comes from an append-only commit log (`commit.log`) that is
//! fsynced before a commit is acknowledged, plus periodic snapshots
//! (`snapshot.db`) that replace the log prefix.

pub mod log;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use im::OrdMap;
use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::clock::{SharedClock, SystemClock};
use crate::error::{Error, Result};
pub use log::{CommitEntry, Record, WriteOp};
use log::{SnapshotHeader, encode_frame, encode_snapshot, decode_snapshot, scan_log};

pub const RETRY_BUDGET: usize = 3;

const SNAPSHOT_FILE: &str = "snapshot.db";
const SNAPSHOT_TMP: &str = "snapshot.db.tmp";
const LOG_FILE: &str = "commit.log";

type Key = (String, String);

#[derive(Debug, Clone)]
struct Versioned {
    version: u64,
    value: Arc<Value>,
}

#[derive(Debug, Clone, Default)]
struct State {
    records: OrdMap<Key, Versioned>,
    collections: im::HashMap<String, u64>,
    last_txn: u64,
}

impl State {
    fn apply(&mut self, entry: &CommitEntry) {
        for w in &entry.writes {
            let key = (w.collection.clone(), w.key.clone());
            match &w.value {
                Some(v) => {
                    self.records.insert(
                        key,
                        Versioned {
                            version: entry.txn_id,
                            value: Arc::new(v.clone()),
                        },
                    );
                }
                None => {
                    self.records.remove(&key);
                }
            }
            self.collections.insert(w.collection.clone(), entry.txn_id);
        }
        self.last_txn = entry.txn_id;
    }

    fn to_records(&self) -> Vec<Record> {
        self.records
            .iter()
            .map(|((c, k), v)| Record {
                collection: c.clone(),
                key: k.clone(),
                value: (*v.value).clone(),
                version: v.version,
            })
            .collect()
    }
}

/// Simulated crash points for kill-testing recovery.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// The next commit writes only this many bytes of its frame, then dies.
    TornAppend { keep_bytes: usize },
    /// The next commit is fully written and synced but never acknowledged.
    AfterAppend,
    /// The next snapshot writes a partial temp file, then dies.
    TornSnapshot { keep_bytes: usize },
    /// The next snapshot is installed but the log is not yet truncated.
    SnapshotBeforeTruncate,
}

#[derive(Debug)]
struct Writer {
    log: Option<File>,
    dir: Option<PathBuf>,
    sync: bool,
    crash: Option<CrashPoint>,
    dead: bool,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// fsync the log on every commit.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { sync: true }
    }
}

#[derive(Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

struct Inner {
    state: RwLock<Arc<State>>,
    writer: Mutex<Writer>,
    clock: SharedClock,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("last_txn", &self.last_txn())
            .finish()
    }
}

impl Store {
    pub fn in_memory() -> Store {
        Store::build(State::default(), None, None, false)
    }

    /// Opens (recovering if needed) the store in `dir`.
    pub fn open(dir: impl AsRef<Path>, opts: StoreOptions) -> Result<Store> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let _ = fs::remove_file(dir.join(SNAPSHOT_TMP));

        let mut state = State::default();
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let (header, records) = decode_snapshot(&fs::read(&snap_path)?)?;
            for r in records {
                state.records.insert(
                    (r.collection, r.key),
                    Versioned {
                        version: r.version,
                        value: Arc::new(r.value),
                    },
                );
            }
            state.last_txn = header.last_txn;
        }

        let log_path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&log_path)?;
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes)?;
        let scan = scan_log(&bytes);
        let mut replayed = 0usize;
        for entry in &scan.entries {
            if entry.txn_id <= state.last_txn {
                continue;
            }
            if entry.txn_id != state.last_txn + 1 {
                return Err(Error::internal(format!(
                    "commit log gap: expected txn {}, found {}",
                    state.last_txn + 1,
                    entry.txn_id
                )));
            }
            state.apply(entry);
            replayed += 1;
        }
        if scan.torn_tail {
            tracing::warn!(
                dropped = bytes.len() as u64 - scan.valid_len,
                "discarding torn commit-log tail"
            );
            log.set_len(scan.valid_len)?;
            log.sync_all()?;
        }
        tracing::debug!(last_txn = state.last_txn, replayed, "store recovered");

        Ok(Store::build(state, Some(log), Some(dir), opts.sync))
    }

    fn build(state: State, log: Option<File>, dir: Option<PathBuf>, sync: bool) -> Store {
        Store {
            inner: Arc::new(Inner {
                state: RwLock::new(Arc::new(state)),
                writer: Mutex::new(Writer {
                    log,
                    dir,
                    sync,
                    crash: None,
                    dead: false,
                }),
                clock: Arc::new(SystemClock::new()),
            }),
        }
    }

    pub fn last_txn(&self) -> u64 {
        self.inner.state.read().last_txn
    }

    /// Runs `f` as a serializable transaction, retrying on conflict.
    pub fn transact<R>(&self, mut f: impl FnMut(&mut Txn) -> Result<R>) -> Result<R> {
        for attempt in 0..=RETRY_BUDGET {
            let mut txn = Txn::new(self.inner.state.read().clone());
            let out = f(&mut txn)?;
            if txn.writes.is_empty() {
                return Ok(out);
            }
            match self.commit(txn)? {
                true => return Ok(out),
                false => tracing::debug!(attempt, "transaction conflict, retrying"),
            }
        }
        Err(Error::conflict("transaction aborted after repeated conflicts"))
    }

    /// Runs `f` against a consistent read-only snapshot.
    pub fn read<R>(&self, f: impl FnOnce(&mut Txn) -> Result<R>) -> Result<R> {
        let mut txn = Txn::new(self.inner.state.read().clone());
        let out = f(&mut txn)?;
        if !txn.writes.is_empty() {
            return Err(Error::internal("write attempted in read-only transaction"));
        }
        Ok(out)
    }

    fn commit(&self, txn: Txn) -> Result<bool> {
        let mut writer = self.inner.writer.lock();
        if writer.dead {
            return Err(Error::internal("store is unavailable after an earlier I/O failure"));
        }
        let current = self.inner.state.read().clone();
        for (key, seen) in &txn.reads {
            let now = current.records.get(key).map_or(0, |v| v.version);
            if now != *seen {
                return Ok(false);
            }
        }
        for (coll, seen) in &txn.scans {
            if current.collections.get(coll).copied().unwrap_or(0) != *seen {
                return Ok(false);
            }
        }

        let entry = CommitEntry {
            txn_id: current.last_txn + 1,
            ts: self.inner.clock.now(),
            writes: txn
                .writes
                .into_iter()
                .map(|((collection, key), value)| {
                    let old_version = current
                        .records
                        .get(&(collection.clone(), key.clone()))
                        .map_or(0, |v| v.version);
                    WriteOp {
                        collection,
                        key,
                        old_version,
                        value,
                    }
                })
                .collect(),
        };

        if let Err(e) = writer.append(&entry) {
            writer.dead = true;
            return Err(e);
        }

        let mut next = (*current).clone();
        next.apply(&entry);
        *self.inner.state.write() = Arc::new(next);
        Ok(true)
    }

    /// Writes a snapshot of the committed state and truncates the log.
    pub fn snapshot(&self) -> Result<()> {
        let mut writer = self.inner.writer.lock();
        if writer.dead {
            return Err(Error::internal("store is unavailable after an earlier I/O failure"));
        }
        let Some(dir) = writer.dir.clone() else {
            return Ok(());
        };
        let bytes = self.export_bytes();
        let crash = writer.crash.take();

        let tmp = dir.join(SNAPSHOT_TMP);
        let mut f = File::create(&tmp)?;
        if let Some(CrashPoint::TornSnapshot { keep_bytes }) = crash {
            f.write_all(&bytes[..keep_bytes.min(bytes.len())])?;
            writer.dead = true;
            return Err(Error::internal("simulated crash while writing snapshot"));
        }
        f.write_all(&bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        sync_dir(&dir)?;
        if crash == Some(CrashPoint::SnapshotBeforeTruncate) {
            writer.dead = true;
            return Err(Error::internal("simulated crash before log truncation"));
        }
        if let Some(log) = writer.log.as_mut() {
            log.set_len(0)?;
            log.sync_all()?;
        }
        Ok(())
    }

    /// Canonical snapshot encoding of the committed state.
    pub fn export_bytes(&self) -> Vec<u8> {
        let state = self.inner.state.read().clone();
        let records = state.to_records();
        let header = SnapshotHeader {
            last_txn: state.last_txn,
            count: records.len() as u64,
        };
        encode_snapshot(header, &records).expect("in-memory encoding cannot fail")
    }

    /// All committed records ordered by (collection, key).
    pub fn records(&self) -> Vec<Record> {
        self.inner.state.read().to_records()
    }

    #[doc(hidden)]
    pub fn inject_crash(&self, point: CrashPoint) {
        self.inner.writer.lock().crash = Some(point);
    }
}

impl Writer {
    fn append(&mut self, entry: &CommitEntry) -> Result<()> {
        let Some(log) = self.log.as_mut() else {
            return Ok(());
        };
        let frame = encode_frame(entry)?;
        match self.crash.take() {
            Some(CrashPoint::TornAppend { keep_bytes }) => {
                log.write_all(&frame[..keep_bytes.min(frame.len())])?;
                log.sync_all()?;
                return Err(Error::internal("simulated crash during commit"));
            }
            Some(CrashPoint::AfterAppend) => {
                log.write_all(&frame)?;
                log.sync_all()?;
                return Err(Error::internal("simulated crash after commit write"));
            }
            other => self.crash = other,
        }
        log.write_all(&frame)?;
        if self.sync {
            log.sync_data()?;
        }
        Ok(())
    }
}

fn sync_dir(dir: &Path) -> Result<()> {
    #[cfg(unix)]
    File::open(dir)?.sync_all()?;
    Ok(())
}

/// A transaction's view: snapshot reads plus buffered writes.
pub struct Txn {
    snapshot: Arc<State>,
    reads: HashMap<Key, u64>,
    scans: HashMap<String, u64>,
    writes: BTreeMap<Key, Option<Value>>,
}

impl Txn {
    fn new(snapshot: Arc<State>) -> Txn {
        Txn {
            snapshot,
            reads: HashMap::new(),
            scans: HashMap::new(),
            writes: BTreeMap::new(),
        }
    }

    pub fn get_value(&mut self, collection: &str, key: &str) -> Option<Value> {
        let k = (collection.to_string(), key.to_string());
        if let Some(w) = self.writes.get(&k) {
            return w.clone();
        }
        let found = self.snapshot.records.get(&k);
        self.reads
            .entry(k)
            .or_insert_with(|| found.map_or(0, |v| v.version));
        found.map(|v| (*v.value).clone())
    }

    pub fn get<T: DeserializeOwned>(&mut self, collection: &str, key: &str) -> Result<Option<T>> {
        self.get_value(collection, key)
            .map(serde_json::from_value)
            .transpose()
            .map_err(Error::from)
    }

    pub fn exists(&mut self, collection: &str, key: &str) -> bool {
        self.get_value(collection, key).is_some()
    }

    pub fn put<T: Serialize>(&mut self, collection: &str, key: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value)?;
        self.writes
            .insert((collection.to_string(), key.to_string()), Some(v));
        Ok(())
    }

    pub fn delete(&mut self, collection: &str, key: &str) {
        self.writes
            .insert((collection.to_string(), key.to_string()), None);
    }

    /// All records in `collection` whose key starts with `prefix`, in key order.
    pub fn scan<T: DeserializeOwned>(
        &mut self,
        collection: &str,
        prefix: &str,
    ) -> Result<Vec<(String, T)>> {
        let coll = collection.to_string();
        self.scans
            .entry(coll.clone())
            .or_insert_with(|| self.snapshot.collections.get(&coll).copied().unwrap_or(0));

        let start = (coll.clone(), prefix.to_string());
        let mut merged: BTreeMap<String, Value> = self
            .snapshot
            .records
            .range(start..)
            .take_while(|((c, k), _)| *c == coll && k.starts_with(prefix))
            .map(|((_, k), v)| (k.clone(), (*v.value).clone()))
            .collect();
        for ((c, k), w) in &self.writes {
            if *c == coll && k.starts_with(prefix) {
                match w {
                    Some(v) => merged.insert(k.clone(), v.clone()),
                    None => merged.remove(k),
                };
            }
        }
        merged
            .into_iter()
            .map(|(k, v)| Ok((k, serde_json::from_value(v)?)))
            .collect()
    }
}
