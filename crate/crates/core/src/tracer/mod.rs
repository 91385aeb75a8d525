//! Append-only lifecycle event log with Git-like versions.
//!
//! Layout on disk (when a directory is configured):
//!
//! ```text
//! traces/<trace_id>/index.json          version metadata
//! traces/<trace_id>/<version_id>.jsonl  inherit headers, events, seal marker
//! ```
//!
//! A regenerated version does not copy its parent's bytes. Its log starts with
//! `inherit` records naming seq ranges owned by earlier versions, followed by the
//! events it produced itself.

mod dot;
mod graph;
mod timing;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::TraceError;
use crate::ids;
use crate::lifecycle::{LifecycleStage, Phase};
use crate::node::NodeKind;

pub use dot::export_dot;
pub use graph::{
    assemble, CallStatus, ExecutionGraph, GraphEdge, NormalizedGraph, NormalizedNode, PathEdge, PathGraph, PathNode,
    TraceNode,
};
pub use timing::{timing_report, CallTiming, CategoryTimes, TimingBreakdown};

/// Snapshots larger than this are replaced by a hash and a preview.
pub const SNAPSHOT_LIMIT_BYTES: usize = 64 * 1024;
const SNAPSHOT_PREVIEW_BYTES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub trace_id: String,
    /// Version whose log owns this event.
    pub version_id: String,
    pub seq: u64,
    pub call_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_call_id: Option<String>,
    pub node: String,
    pub node_kind: NodeKind,
    pub stage: LifecycleStage,
    pub phase: Phase,
    pub timestamp: u64,
    #[serde(default)]
    pub payload: Value,
}

/// An event as handed to [`TraceStore::record_event`]; the store assigns `seq`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraft {
    pub call_id: String,
    pub parent_call_id: Option<String>,
    pub node: String,
    pub node_kind: NodeKind,
    pub stage: LifecycleStage,
    pub phase: Phase,
    pub timestamp: u64,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InheritedRange {
    /// Version whose own events cover the range.
    pub version_id: String,
    pub from_seq: u64,
    /// Exclusive.
    pub to_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideDescription {
    pub call_id: String,
    pub fields: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceVersion {
    pub version_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<String>,
    pub created_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_description: Option<OverrideDescription>,
    #[serde(default)]
    pub inherited: Vec<InheritedRange>,
    #[serde(default)]
    pub sealed: bool,
}

/// One line of a version log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Inherit(InheritedRange),
    Event(TraceEvent),
    Seal { at: u64 },
}

struct VersionLog {
    meta: TraceVersion,
    /// First seq not covered by inherited ranges.
    own_start: u64,
    events: Vec<TraceEvent>,
    sealed_at: Option<u64>,
    writer: Option<BufWriter<File>>,
}

impl VersionLog {
    fn next_seq(&self) -> u64 {
        self.own_start + self.events.len() as u64
    }

    fn records(&self) -> impl Iterator<Item = LogRecord> + '_ {
        self.meta
            .inherited
            .iter()
            .cloned()
            .map(LogRecord::Inherit)
            .chain(self.events.iter().cloned().map(LogRecord::Event))
            .chain(self.sealed_at.map(|at| LogRecord::Seal { at }))
    }
}

struct TraceState {
    root_version: String,
    versions: BTreeMap<String, VersionLog>,
    /// Creation order of versions.
    order: Vec<String>,
}

struct TraceEntry {
    state: Mutex<TraceState>,
    changed: Condvar,
    dir: Option<PathBuf>,
}

impl TraceState {
    fn version(&self, trace_id: &str, version_id: &str) -> Result<&VersionLog, TraceError> {
        self.versions.get(version_id).ok_or_else(|| TraceError::UnknownVersion {
            trace: trace_id.to_owned(),
            version: version_id.to_owned(),
        })
    }

    fn event_at(&self, log: &VersionLog, seq: u64) -> Option<TraceEvent> {
        if seq >= log.own_start {
            return log.events.get((seq - log.own_start) as usize).cloned();
        }
        let range = log.meta.inherited.iter().find(|r| r.from_seq <= seq && seq < r.to_seq)?;
        let owner = self.versions.get(&range.version_id)?;
        owner.events.get(seq.checked_sub(owner.own_start)? as usize).cloned()
    }

    fn full_view(&self, log: &VersionLog) -> Vec<TraceEvent> {
        let mut out = Vec::with_capacity(log.next_seq() as usize);
        for range in &log.meta.inherited {
            if let Some(owner) = self.versions.get(&range.version_id) {
                out.extend(
                    owner
                        .events
                        .iter()
                        .filter(|e| e.seq >= range.from_seq && e.seq < range.to_seq)
                        .cloned(),
                );
            }
        }
        out.extend(log.events.iter().cloned());
        out
    }
}

/// Outcome of waiting on a [`EventStream`].
#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Event(TraceEvent),
    Sealed,
    Timeout,
}

/// Ordered, resumable feed over one version's events.
pub struct EventStream {
    entry: Arc<TraceEntry>,
    trace_id: String,
    version_id: String,
    cursor: u64,
}

impl EventStream {
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Next event at the cursor, blocking up to `timeout` for live events.
    pub fn next_timeout(&mut self, timeout: Duration) -> Result<StreamItem, TraceError> {
        let deadline = Instant::now() + timeout;
        let mut state = self.entry.state.lock();
        loop {
            let log = state.version(&self.trace_id, &self.version_id)?;
            if self.cursor < log.next_seq() {
                let event = state
                    .event_at(log, self.cursor)
                    .ok_or_else(|| TraceError::Corrupt(format!("missing seq {}", self.cursor)))?;
                self.cursor += 1;
                return Ok(StreamItem::Event(event));
            }
            if log.sealed_at.is_some() {
                return Ok(StreamItem::Sealed);
            }
            if self.entry.changed.wait_until(&mut state, deadline).timed_out() {
                return Ok(StreamItem::Timeout);
            }
        }
    }

    /// Drains until sealed. Intended for tests and CLI inspection.
    pub fn collect_until_sealed(mut self, timeout: Duration) -> Result<Vec<TraceEvent>, TraceError> {
        let mut out = Vec::new();
        loop {
            match self.next_timeout(timeout)? {
                StreamItem::Event(e) => out.push(e),
                StreamItem::Sealed => return Ok(out),
                StreamItem::Timeout => return Err(TraceError::UnsealedTrace(self.trace_id.clone())),
            }
        }
    }
}

/// Summary row for trace listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trace_id: String,
    pub root_version: String,
    pub versions: usize,
    pub sealed: bool,
}

/// Concurrent trace store. Seq assignment is serialized per trace.
pub struct TraceStore {
    dir: Option<PathBuf>,
    traces: RwLock<HashMap<String, Arc<TraceEntry>>>,
}

impl TraceStore {
    pub fn in_memory() -> Self {
        Self { dir: None, traces: RwLock::new(HashMap::new()) }
    }

    /// Opens (and loads) a store rooted at `dir`; traces live under `dir/traces`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, TraceError> {
        let root = dir.as_ref().join("traces");
        fs::create_dir_all(&root)?;
        let mut traces = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let trace_id = entry.file_name().to_string_lossy().into_owned();
            let state = load_trace(&entry.path(), &trace_id)?;
            traces.insert(
                trace_id,
                Arc::new(TraceEntry { state: Mutex::new(state), changed: Condvar::new(), dir: Some(entry.path()) }),
            );
        }
        Ok(Self { dir: Some(root), traces: RwLock::new(traces) })
    }

    pub fn directory(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry(&self, trace_id: &str) -> Result<Arc<TraceEntry>, TraceError> {
        self.traces
            .read()
            .get(trace_id)
            .cloned()
            .ok_or_else(|| TraceError::UnknownTrace(trace_id.to_owned()))
    }

    pub fn contains(&self, trace_id: &str) -> bool {
        self.traces.read().contains_key(trace_id)
    }

    /// Creates a trace with an empty root version and returns the version id.
    pub fn begin_trace(&self, trace_id: &str) -> Result<String, TraceError> {
        let version_id = ids::new_id();
        self.create_trace(trace_id, &version_id)?;
        Ok(version_id)
    }

    fn create_trace(&self, trace_id: &str, version_id: &str) -> Result<Arc<TraceEntry>, TraceError> {
        let mut traces = self.traces.write();
        if let Some(existing) = traces.get(trace_id) {
            return Ok(existing.clone());
        }
        let dir = match &self.dir {
            Some(root) => {
                let d = root.join(trace_id);
                fs::create_dir_all(&d)?;
                Some(d)
            }
            None => None,
        };
        let meta = TraceVersion {
            version_id: version_id.to_owned(),
            parent_version: None,
            created_at: ids::now_ms(),
            override_description: None,
            inherited: Vec::new(),
            sealed: false,
        };
        let log = new_log(dir.as_deref(), meta, 0)?;
        let state = TraceState {
            root_version: version_id.to_owned(),
            versions: BTreeMap::from([(version_id.to_owned(), log)]),
            order: vec![version_id.to_owned()],
        };
        if let Some(d) = &dir {
            write_index(d, &state)?;
        }
        let entry = Arc::new(TraceEntry { state: Mutex::new(state), changed: Condvar::new(), dir });
        traces.insert(trace_id.to_owned(), entry.clone());
        Ok(entry)
    }

    /// Appends an event, assigning the next dense seq. Opens the trace if unknown.
    pub fn record_event(&self, trace_id: &str, version_id: &str, draft: EventDraft) -> Result<u64, TraceError> {
        let entry = match self.entry(trace_id) {
            Ok(e) => e,
            Err(TraceError::UnknownTrace(_)) => self.create_trace(trace_id, version_id)?,
            Err(e) => return Err(e),
        };
        let mut state = entry.state.lock();
        let log = state.versions.get_mut(version_id).ok_or_else(|| TraceError::UnknownVersion {
            trace: trace_id.to_owned(),
            version: version_id.to_owned(),
        })?;
        if log.sealed_at.is_some() {
            return Err(TraceError::SealedTrace(trace_id.to_owned()));
        }
        let seq = log.next_seq();
        let event = TraceEvent {
            trace_id: trace_id.to_owned(),
            version_id: version_id.to_owned(),
            seq,
            call_id: draft.call_id,
            parent_call_id: draft.parent_call_id,
            node: draft.node,
            node_kind: draft.node_kind,
            stage: draft.stage,
            phase: draft.phase,
            timestamp: draft.timestamp,
            payload: draft.payload,
        };
        if let Some(w) = log.writer.as_mut() {
            append_line(w, &LogRecord::Event(event.clone()))?;
        }
        log.events.push(event);
        drop(state);
        entry.changed.notify_all();
        Ok(seq)
    }

    pub fn seal(&self, trace_id: &str, version_id: &str) -> Result<(), TraceError> {
        let entry = self.entry(trace_id)?;
        let mut state = entry.state.lock();
        let log = state.versions.get_mut(version_id).ok_or_else(|| TraceError::UnknownVersion {
            trace: trace_id.to_owned(),
            version: version_id.to_owned(),
        })?;
        if log.sealed_at.is_some() {
            return Err(TraceError::SealedTrace(trace_id.to_owned()));
        }
        let at = ids::now_ms();
        if let Some(w) = log.writer.as_mut() {
            append_line(w, &LogRecord::Seal { at })?;
        }
        log.sealed_at = Some(at);
        log.meta.sealed = true;
        log.writer = None;
        if let Some(d) = &entry.dir {
            write_index(d, &state)?;
        }
        drop(state);
        entry.changed.notify_all();
        Ok(())
    }

    pub fn root_version(&self, trace_id: &str) -> Result<String, TraceError> {
        Ok(self.entry(trace_id)?.state.lock().root_version.clone())
    }

    fn resolve_version(&self, trace_id: &str, version_id: Option<&str>) -> Result<(Arc<TraceEntry>, String), TraceError> {
        let entry = self.entry(trace_id)?;
        let version = match version_id {
            Some(v) => v.to_owned(),
            None => entry.state.lock().root_version.clone(),
        };
        entry.state.lock().version(trace_id, &version)?;
        Ok((entry, version))
    }

    pub fn is_sealed(&self, trace_id: &str, version_id: Option<&str>) -> Result<bool, TraceError> {
        let (entry, version) = self.resolve_version(trace_id, version_id)?;
        let state = entry.state.lock();
        Ok(state.version(trace_id, &version)?.sealed_at.is_some())
    }

    /// All events visible in a version, inherited ones included, in seq order.
    pub fn events(&self, trace_id: &str, version_id: Option<&str>) -> Result<Vec<TraceEvent>, TraceError> {
        let (entry, version) = self.resolve_version(trace_id, version_id)?;
        let state = entry.state.lock();
        let log = state.version(trace_id, &version)?;
        Ok(state.full_view(log))
    }

    pub fn versions(&self, trace_id: &str) -> Result<Vec<TraceVersion>, TraceError> {
        let entry = self.entry(trace_id)?;
        let state = entry.state.lock();
        Ok(state.order.iter().map(|v| state.versions[v].meta.clone()).collect())
    }

    pub fn version_meta(&self, trace_id: &str, version_id: &str) -> Result<TraceVersion, TraceError> {
        let entry = self.entry(trace_id)?;
        let state = entry.state.lock();
        Ok(state.version(trace_id, version_id)?.meta.clone())
    }

    pub fn list(&self) -> Vec<TraceSummary> {
        let traces = self.traces.read();
        let mut out: Vec<TraceSummary> = traces
            .iter()
            .map(|(id, entry)| {
                let state = entry.state.lock();
                TraceSummary {
                    trace_id: id.clone(),
                    root_version: state.root_version.clone(),
                    versions: state.order.len(),
                    sealed: state.versions[&state.root_version].sealed_at.is_some(),
                }
            })
            .collect();
        out.sort_by(|a, b| a.trace_id.cmp(&b.trace_id));
        out
    }

    /// Branches a new version whose log inherits every event of `parent` with
    /// `seq < branch_seq`.
    pub fn branch(
        &self,
        trace_id: &str,
        parent: &str,
        branch_seq: u64,
        override_description: OverrideDescription,
    ) -> Result<String, TraceError> {
        let entry = self.entry(trace_id)?;
        let mut state = entry.state.lock();
        let parent_log = state.version(trace_id, parent)?;
        if parent_log.sealed_at.is_none() {
            return Err(TraceError::UnsealedTrace(trace_id.to_owned()));
        }
        let mut inherited: Vec<InheritedRange> = parent_log
            .meta
            .inherited
            .iter()
            .filter(|r| r.from_seq < branch_seq)
            .map(|r| InheritedRange { to_seq: r.to_seq.min(branch_seq), ..r.clone() })
            .collect();
        if branch_seq > parent_log.own_start {
            inherited.push(InheritedRange {
                version_id: parent.to_owned(),
                from_seq: parent_log.own_start,
                to_seq: branch_seq.min(parent_log.next_seq()),
            });
        }
        let own_start = inherited.last().map(|r| r.to_seq).unwrap_or(0);
        let version_id = ids::new_id();
        let meta = TraceVersion {
            version_id: version_id.clone(),
            parent_version: Some(parent.to_owned()),
            created_at: ids::now_ms(),
            override_description: Some(override_description),
            inherited,
            sealed: false,
        };
        let log = new_log(entry.dir.as_deref(), meta, own_start)?;
        state.versions.insert(version_id.clone(), log);
        state.order.push(version_id.clone());
        if let Some(d) = &entry.dir {
            write_index(d, &state)?;
        }
        Ok(version_id)
    }

    /// SHA-256 over the version's own log bytes.
    pub fn version_checksum(&self, trace_id: &str, version_id: &str) -> Result<String, TraceError> {
        let entry = self.entry(trace_id)?;
        let state = entry.state.lock();
        let log = state.version(trace_id, version_id)?;
        let mut hasher = Sha256::new();
        for record in log.records() {
            hasher.update(serde_json::to_string(&record).map_err(|e| TraceError::Corrupt(e.to_string()))?);
            hasher.update(b"\n");
        }
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn stream_events(
        &self,
        trace_id: &str,
        version_id: Option<&str>,
        from_seq: u64,
    ) -> Result<EventStream, TraceError> {
        let (entry, version) = self.resolve_version(trace_id, version_id)?;
        Ok(EventStream { entry, trace_id: trace_id.to_owned(), version_id: version, cursor: from_seq })
    }

    pub fn assemble_graph(&self, trace_id: &str, version_id: Option<&str>) -> Result<ExecutionGraph, TraceError> {
        let (entry, version) = self.resolve_version(trace_id, version_id)?;
        let (events, meta) = {
            let state = entry.state.lock();
            let log = state.version(trace_id, &version)?;
            (state.full_view(log), log.meta.clone())
        };
        Ok(assemble(trace_id, &meta.version_id, meta.parent_version.as_deref(), &events))
    }

    pub fn timing_report(&self, trace_id: &str, version_id: Option<&str>) -> Result<TimingBreakdown, TraceError> {
        if !self.is_sealed(trace_id, version_id)? {
            return Err(TraceError::UnsealedTrace(trace_id.to_owned()));
        }
        Ok(timing_report(&self.assemble_graph(trace_id, version_id)?))
    }
}

fn new_log(dir: Option<&Path>, meta: TraceVersion, own_start: u64) -> Result<VersionLog, TraceError> {
    let writer = match dir {
        Some(d) => {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(d.join(format!("{}.jsonl", meta.version_id)))?;
            let mut w = BufWriter::new(file);
            for range in &meta.inherited {
                append_line(&mut w, &LogRecord::Inherit(range.clone()))?;
            }
            Some(w)
        }
        None => None,
    };
    Ok(VersionLog { meta, own_start, events: Vec::new(), sealed_at: None, writer })
}

fn append_line(w: &mut BufWriter<File>, record: &LogRecord) -> Result<(), TraceError> {
    let line = serde_json::to_string(record).map_err(|e| TraceError::Corrupt(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    trace_id: String,
    root_version: String,
    versions: Vec<TraceVersion>,
}

fn write_index(dir: &Path, state: &TraceState) -> Result<(), TraceError> {
    let trace_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let index = IndexFile {
        trace_id,
        root_version: state.root_version.clone(),
        versions: state.order.iter().map(|v| state.versions[v].meta.clone()).collect(),
    };
    let tmp = dir.join("index.json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&index).map_err(|e| TraceError::Corrupt(e.to_string()))?)?;
    fs::rename(tmp, dir.join("index.json"))?;
    Ok(())
}

fn load_trace(dir: &Path, trace_id: &str) -> Result<TraceState, TraceError> {
    let index: IndexFile = serde_json::from_slice(&fs::read(dir.join("index.json"))?)
        .map_err(|e| TraceError::Corrupt(format!("{trace_id}/index.json: {e}")))?;
    let mut versions = BTreeMap::new();
    let mut order = Vec::new();
    for mut meta in index.versions {
        let path = dir.join(format!("{}.jsonl", meta.version_id));
        let mut events = Vec::new();
        let mut sealed_at = None;
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogRecord>(&line)
                    .map_err(|e| TraceError::Corrupt(format!("{}: {e}", path.display())))?
                {
                    LogRecord::Inherit(_) => {}
                    LogRecord::Event(e) => events.push(e),
                    LogRecord::Seal { at } => sealed_at = Some(at),
                }
            }
        }
        let own_start = meta.inherited.last().map(|r| r.to_seq).unwrap_or(0);
        meta.sealed = sealed_at.is_some();
        // an unsealed log is reopened for appends (e.g. after a crash mid-run)
        let writer = if sealed_at.is_none() {
            Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?))
        } else {
            None
        };
        order.push(meta.version_id.clone());
        versions.insert(meta.version_id.clone(), VersionLog { meta, own_start, events, sealed_at, writer });
    }
    Ok(TraceState { root_version: index.root_version, versions, order })
}

/// Bounds a snapshot: values whose JSON form exceeds 64 KiB become
/// `{"$truncated": true, "sha256", "bytes", "preview"}`.
pub fn bounded_snapshot(value: Value) -> Value {
    let text = match serde_json::to_string(&value) {
        Ok(t) => t,
        Err(_) => return value,
    };
    if text.len() <= SNAPSHOT_LIMIT_BYTES {
        return value;
    }
    let mut cut = SNAPSHOT_PREVIEW_BYTES;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    json!({
        "$truncated": true,
        "sha256": hex::encode(Sha256::digest(text.as_bytes())),
        "bytes": text.len(),
        "preview": &text[..cut],
    })
}

pub fn is_truncated_snapshot(value: &Value) -> bool {
    value.get("$truncated").and_then(Value::as_bool).unwrap_or(false)
}
