//! Commit-log and snapshot framing.
//!
//! Both files use little-endian framing. A commit-log frame is
//! `u32 len | payload | u32 crc32(payload)`; the payload is the canonical JSON
//! of one [`CommitEntry`]. The snapshot file is `MAGIC`, then `u32 len | json`
//! frames (a header followed by one frame per record), then a trailing
//! `u32 crc32` of every preceding byte.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"TENETSN1";

/// One write inside a committed transaction. `value = None` is a tombstone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteOp {
    pub collection: String,
    pub key: String,
    pub old_version: u64,
    pub value: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitEntry {
    pub txn_id: u64,
    pub ts: u64,
    pub writes: Vec<WriteOp>,
}

/// A stored document with the id of the transaction that last wrote it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub collection: String,
    pub key: String,
    pub value: Value,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub last_txn: u64,
    pub count: u64,
}

/// Canonical JSON: object keys sorted at every level.
fn canonical<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(&serde_json::to_value(v)?)?)
}

pub fn encode_frame(entry: &CommitEntry) -> Result<Vec<u8>> {
    let payload = canonical(entry)?;
    let len = u32::try_from(payload.len()).map_err(|_| Error::internal("commit too large"))?;
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

/// Outcome of scanning a commit log.
#[derive(Debug)]
pub struct LogScan {
    pub entries: Vec<CommitEntry>,
    /// Byte offset just past the last intact frame.
    pub valid_len: u64,
    /// True when trailing bytes were discarded.
    pub torn_tail: bool,
}

/// Decodes frames until the first incomplete or corrupt one.
pub fn scan_log(bytes: &[u8]) -> LogScan {
    let mut entries = Vec::new();
    let mut pos = 0usize;
    loop {
        let rest = &bytes[pos..];
        if rest.is_empty() {
            return LogScan {
                entries,
                valid_len: pos as u64,
                torn_tail: false,
            };
        }
        let Some(entry) = decode_frame(rest) else {
            return LogScan {
                entries,
                valid_len: pos as u64,
                torn_tail: true,
            };
        };
        pos += entry.1;
        entries.push(entry.0);
    }
}

fn decode_frame(buf: &[u8]) -> Option<(CommitEntry, usize)> {
    let len = u32::from_le_bytes(buf.get(..4)?.try_into().ok()?) as usize;
    let payload = buf.get(4..4 + len)?;
    let crc = u32::from_le_bytes(buf.get(4 + len..8 + len)?.try_into().ok()?);
    if crc32fast::hash(payload) != crc {
        return None;
    }
    let entry = serde_json::from_slice(payload).ok()?;
    Some((entry, 8 + len))
}

pub fn encode_snapshot(header: SnapshotHeader, records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    push_json(&mut out, &header)?;
    for r in records {
        push_json(&mut out, r)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn push_json<T: Serialize>(out: &mut Vec<u8>, v: &T) -> Result<()> {
    let payload = canonical(v)?;
    let len = u32::try_from(payload.len()).map_err(|_| Error::internal("record too large"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(())
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(SnapshotHeader, Vec<Record>)> {
    let corrupt = |what: &str| Error::internal(format!("corrupt snapshot: {what}"));
    if bytes.len() < SNAPSHOT_MAGIC.len() + 4 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }
    let mut pos = SNAPSHOT_MAGIC.len();
    let next = |pos: &mut usize| -> Result<&[u8]> {
        let len = body
            .get(*pos..*pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| corrupt("truncated length"))?;
        let payload = body
            .get(*pos + 4..*pos + 4 + len)
            .ok_or_else(|| corrupt("truncated record"))?;
        *pos += 4 + len;
        Ok(payload)
    };
    let header: SnapshotHeader =
        serde_json::from_slice(next(&mut pos)?).map_err(|_| corrupt("header"))?;
    let mut records = Vec::with_capacity(header.count as usize);
    for _ in 0..header.count {
        records.push(serde_json::from_slice(next(&mut pos)?).map_err(|_| corrupt("record"))?);
    }
    if pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok((header, records))
}
