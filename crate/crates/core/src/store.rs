//! Append-only persistence: the req/res database, the session log, and
//! snapshot files for learned models.
//!
//! Everything on disk is line-delimited JSON — one self-describing document
//! per line, response bodies carried as base64 so arbitrary bytes stay
//! line-safe. Records are never mutated or deleted; a store file is owned by
//! exactly one writer at a time.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line} column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record_id not increasing: {prev} followed by {next}")]
    IdOrder { prev: u64, next: u64 },
    #[error("empty request_key")]
    EmptyKey,
    #[error("snapshot kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch { expected: String, found: String },
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Base64 body (de)serialization helper for serde `with` attributes.
pub mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Vec<u8>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// Where a stored response came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordSource {
    /// Loaded from a seed corpus file.
    SeedCorpus,
    /// Gathered by broadcasting a trusted OOV request to the local farm.
    LocalBroadcast,
    /// Gathered by forwarding an untrusted OOV request to internet devices.
    InternetForward,
    /// The OOV request itself, logged before any response exists for it.
    /// Pending records are never served and never train the scorer.
    Pending,
}

/// A full HTTP response: status line, headers, raw body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseDoc {
    pub status: u16,
    pub reason: String,
    pub headers: Vec<(String, String)>,
    #[serde(with = "b64")]
    pub body: Vec<u8>,
}

impl ResponseDoc {
    pub fn new(status: u16, reason: &str, headers: &[(&str, &str)], body: &[u8]) -> Self {
        ResponseDoc {
            status,
            reason: reason.to_string(),
            headers: headers
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            body: body.to_vec(),
        }
    }

    /// Placeholder response carried by `Pending` records.
    pub fn empty() -> Self {
        ResponseDoc {
            status: 0,
            reason: String::new(),
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    /// Serialize to wire bytes. A `Content-Length` header is added when the
    /// stored headers lack one, so replayed responses frame correctly on
    /// keep-alive connections.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("HTTP/1.1 {} {}\r\n", self.status, self.reason).into_bytes();
        let mut has_length = false;
        for (name, value) in &self.headers {
            if name.eq_ignore_ascii_case("content-length") {
                has_length = true;
            }
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(b": ");
            out.extend_from_slice(value.as_bytes());
            out.extend_from_slice(b"\r\n");
        }
        if !has_length {
            out.extend_from_slice(format!("Content-Length: {}\r\n", self.body.len()).as_bytes());
        }
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&self.body);
        out
    }

    /// Minimal parse of wire bytes back into (status, body); used by the
    /// attacker simulator to evaluate expectation predicates.
    pub fn parse_status_and_body(bytes: &[u8]) -> Option<(u16, Vec<u8>)> {
        let head_end = bytes
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .map(|p| (p, p + 4))
            .or_else(|| bytes.windows(2).position(|w| w == b"\n\n").map(|p| (p, p + 2)));
        let (head_len, body_start) = head_end.unwrap_or((bytes.len(), bytes.len()));
        let head = String::from_utf8_lossy(&bytes[..head_len]);
        let status_line = head.lines().next()?;
        let mut parts = status_line.split_whitespace();
        let version = parts.next()?;
        if !version.starts_with("HTTP/") {
            return None;
        }
        let status: u16 = parts.next()?.parse().ok()?;
        Some((status, bytes[body_start..].to_vec()))
    }
}

/// One request/response pair in the database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReqResRecord {
    pub record_id: u64,
    pub request_key: String,
    pub response: ResponseDoc,
    pub source: RecordSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    pub created_at: u64,
}

/// A record before the store assigns its id.
#[derive(Debug, Clone)]
pub struct NewRecord {
    pub request_key: String,
    pub response: ResponseDoc,
    pub source: RecordSource,
    pub device_id: Option<String>,
    pub created_at: u64,
}

/// One seed-corpus document: the raw request bytes and the response to
/// store for them. Ingestion normalizes the request into its key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEntry {
    #[serde(with = "b64")]
    pub request: Vec<u8>,
    pub response: ResponseDoc,
}

/// The req/res database: append-only records indexed by request_key.
pub struct ReqResStore {
    records: Vec<ReqResRecord>,
    by_key: BTreeMap<String, Vec<usize>>,
    file: Option<(PathBuf, File)>,
}

impl ReqResStore {
    /// A store with no backing file; appends live only in memory.
    pub fn in_memory() -> Self {
        ReqResStore {
            records: Vec::new(),
            by_key: BTreeMap::new(),
            file: None,
        }
    }

    /// Open (creating if absent) a file-backed store and index its records.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let records: Vec<ReqResRecord> = read_jsonl(path)?;
        let mut prev = 0u64;
        for rec in &records {
            if rec.record_id <= prev {
                return Err(StoreError::IdOrder {
                    prev,
                    next: rec.record_id,
                });
            }
            prev = rec.record_id;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        let mut store = ReqResStore {
            records: Vec::new(),
            by_key: BTreeMap::new(),
            file: Some((path.to_path_buf(), file)),
        };
        for rec in records {
            store.index(rec);
        }
        Ok(store)
    }

    fn index(&mut self, record: ReqResRecord) {
        let idx = self.records.len();
        self.by_key
            .entry(record.request_key.clone())
            .or_default()
            .push(idx);
        self.records.push(record);
    }

    /// Persist a new record; the returned id is previous max + 1.
    pub fn append_record(&mut self, new: NewRecord) -> Result<u64, StoreError> {
        if new.request_key.is_empty() {
            return Err(StoreError::EmptyKey);
        }
        let record_id = self.records.last().map(|r| r.record_id).unwrap_or(0) + 1;
        let record = ReqResRecord {
            record_id,
            request_key: new.request_key,
            response: new.response,
            source: new.source,
            device_id: new.device_id,
            created_at: new.created_at,
        };
        if let Some((path, file)) = &mut self.file {
            write_line(path, file, &record)?;
        }
        self.index(record);
        Ok(record_id)
    }

    /// All records for a key, in insertion order. Empty means OOV.
    pub fn lookup_responses(&self, request_key: &str) -> Vec<&ReqResRecord> {
        self.by_key
            .get(request_key)
            .map(|idxs| idxs.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// Like `lookup_responses` but skipping `Pending` placeholders — the
    /// records that can actually be served or trained on.
    pub fn servable_responses(&self, request_key: &str) -> Vec<&ReqResRecord> {
        self.lookup_responses(request_key)
            .into_iter()
            .filter(|r| r.source != RecordSource::Pending)
            .collect()
    }

    pub fn get(&self, record_id: u64) -> Option<&ReqResRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn records(&self) -> &[ReqResRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Why a session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloseReason {
    IdleTimeout,
    PeerClose,
    ExploitDetected,
}

/// One request/response exchange inside a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    /// State key of the incoming request.
    pub state: String,
    /// Chosen action: the anchor record_id of the served response group, or
    /// 0 when the reply was a farm/default response with no stored action.
    pub action: u64,
    /// Size of the raw request in bytes.
    pub request_bytes: u64,
    /// record_id of the served response (0 for the configured default).
    pub response_record: u64,
    pub timestamp: u64,
}

/// A closed attacker session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: u64,
    pub peer_ip: String,
    pub peer_port: u16,
    pub transitions: Vec<Transition>,
    pub closed_reason: CloseReason,
    pub session_length: u64,
    pub volume_bytes: u64,
}

impl SessionRecord {
    /// Build a closed session; length and volume are derived from the
    /// transitions so the stored invariants hold by construction.
    pub fn close(
        session_id: u64,
        peer_ip: String,
        peer_port: u16,
        transitions: Vec<Transition>,
        closed_reason: CloseReason,
    ) -> Self {
        let session_length = transitions.len() as u64;
        let volume_bytes = transitions.iter().map(|t| t.request_bytes).sum();
        SessionRecord {
            session_id,
            peer_ip,
            peer_port,
            transitions,
            closed_reason,
            session_length,
            volume_bytes,
        }
    }
}

/// Append-only session log.
pub struct SessionLog {
    sessions: Vec<SessionRecord>,
    file: Option<(PathBuf, File)>,
}

impl SessionLog {
    pub fn in_memory() -> Self {
        SessionLog {
            sessions: Vec::new(),
            file: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let sessions = read_jsonl(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(SessionLog {
            sessions,
            file: Some((path.to_path_buf(), file)),
        })
    }

    pub fn append_session(&mut self, session: SessionRecord) -> Result<(), StoreError> {
        if let Some((path, file)) = &mut self.file {
            write_line(path, file, &session)?;
        }
        self.sessions.push(session);
        Ok(())
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

/// Read a whole line-delimited JSON file; a missing file reads as empty.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path, e)),
    };
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Append one document as a JSON line and flush it.
pub fn write_line<T: Serialize>(path: &Path, file: &mut File, value: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(value).map_err(|e| StoreError::Parse {
        path: path.to_path_buf(),
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
    file.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize, Deserialize)]
struct SnapshotEnvelope<T> {
    kind: String,
    version: u32,
    payload: T,
}

const SNAPSHOT_VERSION: u32 = 1;

/// Write a model snapshot: a single JSON line tagged with its kind.
pub fn save_snapshot<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<(), StoreError> {
    let envelope = SnapshotEnvelope {
        kind: kind.to_string(),
        version: SNAPSHOT_VERSION,
        payload,
    };
    let mut file = File::create(path).map_err(|e| io_err(path, e))?;
    write_line(path, &mut file, &envelope)?;
    file.sync_all().map_err(|e| io_err(path, e))
}

/// Load a snapshot written by [`save_snapshot`]; the kind tag must match.
pub fn load_snapshot<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let envelope: SnapshotEnvelope<T> =
        serde_json::from_str(text.trim_end()).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    if envelope.kind != kind {
        return Err(StoreError::KindMismatch {
            expected: kind.to_string(),
            found: envelope.kind,
        });
    }
    Ok(envelope.payload)
}
