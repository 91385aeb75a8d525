//! Asset bank: deduplicated trace deposits, review gating, knowledge export and
//! prompt refinement.
//!
//! State is event-sourced: every mutation is appended to `bank/ledger.jsonl`
//! and the in-memory view is rebuilt by replaying that file on open.

mod canonical;
mod md5;
mod templates;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::error::TraceError;
use crate::ids;
use crate::model::{ChatMessage, ChatModel};
use crate::registry::Registry;
use crate::tools::KnowledgeBase;
use crate::tracer::TraceStore;

pub use canonical::{
    canonical_digest, canonical_json, infer_priority, project_version, Priority, ProjectedCall, TraceProjection,
};
pub use md5::{md5, md5_hex, Md5};
pub use templates::{builtin_templates, AnnotationTemplate, FieldType, TemplateField};

pub const OPTIMIZE_PROMPT_TEMPLATE: &str = include_str!("../../templates/optimize_prompt.v1.txt");
/// Approved traces quoted in one optimizer prompt.
pub const OPTIMIZER_EXCERPTS: usize = 5;
pub const OPTIMIZER_EXCERPT_BYTES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReviewState {
    Pending,
    Annotated,
    Approved,
    Rejected,
}

impl ReviewState {
    pub const ALL: [ReviewState; 4] =
        [ReviewState::Pending, ReviewState::Annotated, ReviewState::Approved, ReviewState::Rejected];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| format!("{st:?}").eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewAction {
    Annotate,
    Approve,
    Reject,
    Reopen,
}

impl ReviewAction {
    pub const ALL: [ReviewAction; 4] =
        [ReviewAction::Annotate, ReviewAction::Approve, ReviewAction::Reject, ReviewAction::Reopen];
}

/// The review table. `None` means the action is not allowed from `from`.
pub fn transition(from: ReviewState, action: ReviewAction) -> Option<ReviewState> {
    use ReviewAction::*;
    use ReviewState::*;
    match (from, action) {
        (Pending, Annotate) => Some(Annotated),
        (Annotated, Approve) => Some(Approved),
        (Pending | Annotated, Reject) => Some(Rejected),
        (Rejected, Reopen) => Some(Pending),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub record_id: String,
    pub digest: String,
    pub trace_id: String,
    pub version_id: String,
    pub priority: Priority,
    pub occurrence_count: u64,
    pub state: ReviewState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_note: Option<String>,
    pub deposited_at: u64,
    pub state_changed_at: u64,
    pub projection: TraceProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSample {
    pub sample_id: String,
    pub record_id: String,
    pub template_id: String,
    pub priority: Priority,
    pub payload: Value,
    /// When the source record was approved; exports of unchanged records are
    /// byte-identical.
    pub approved_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<Priority>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Only records deposited at or after this time (ms).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub agent: String,
    pub version: u32,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<u32>,
    #[serde(default)]
    pub rationale: String,
    pub applied: bool,
    pub created_at: u64,
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("trace `{0}` is not sealed")]
    UnsealedTrace(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("unknown record `{0}`")]
    UnknownRecord(String),
    #[error("cannot {action:?} a record in state {from:?}")]
    InvalidTransition { from: ReviewState, action: ReviewAction },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template violation: {0}")]
    TemplateViolation(String),
    #[error("no approved traces involve `{0}`")]
    NoApprovedTraces(String),
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent `{agent}` has no prompt version {version}")]
    UnknownPromptVersion { agent: String, version: u32 },
    #[error("bank ledger: {0}")]
    Io(#[from] std::io::Error),
    #[error("bank ledger corrupt: {0}")]
    Corrupt(String),
}

/// One line of the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LedgerEvent {
    Deposited { record: Box<BankRecord> },
    Duplicate { record_id: String, at: u64 },
    Annotated { record_id: String, template_id: String, annotation: Value, at: u64 },
    Audited { record_id: String, verdict: Verdict, note: Option<String>, at: u64 },
    Reopened { record_id: String, at: u64 },
    PromptProposed { version: PromptVersion },
    PromptApplied { agent: String, version: u32, at: u64 },
}

#[derive(Default)]
struct BankState {
    records: BTreeMap<String, BankRecord>,
    by_digest: HashMap<String, String>,
    prompts: BTreeMap<String, Vec<PromptVersion>>,
    writer: Option<BufWriter<File>>,
}

impl BankState {
    fn apply(&mut self, event: &LedgerEvent) -> Result<(), BankError> {
        match event {
            LedgerEvent::Deposited { record } => {
                self.by_digest.insert(record.digest.clone(), record.record_id.clone());
                self.records.insert(record.record_id.clone(), (**record).clone());
            }
            LedgerEvent::Duplicate { record_id, .. } => self.record_mut(record_id)?.occurrence_count += 1,
            LedgerEvent::Annotated { record_id, template_id, annotation, at } => {
                let r = self.record_mut(record_id)?;
                r.state = ReviewState::Annotated;
                r.template_id = Some(template_id.clone());
                r.annotation = Some(annotation.clone());
                r.state_changed_at = *at;
            }
            LedgerEvent::Audited { record_id, verdict, note, at } => {
                let r = self.record_mut(record_id)?;
                r.state = match verdict {
                    Verdict::Approve => ReviewState::Approved,
                    Verdict::Reject => ReviewState::Rejected,
                };
                r.audit_note = note.clone();
                r.state_changed_at = *at;
            }
            LedgerEvent::Reopened { record_id, at } => {
                let r = self.record_mut(record_id)?;
                r.state = ReviewState::Pending;
                r.template_id = None;
                r.annotation = None;
                r.state_changed_at = *at;
            }
            LedgerEvent::PromptProposed { version } => {
                self.prompts.entry(version.agent.clone()).or_default().push(version.clone());
            }
            LedgerEvent::PromptApplied { agent, version, .. } => {
                for v in self.prompts.entry(agent.clone()).or_default() {
                    v.applied = v.version == *version;
                }
            }
        }
        Ok(())
    }

    fn record_mut(&mut self, record_id: &str) -> Result<&mut BankRecord, BankError> {
        self.records.get_mut(record_id).ok_or_else(|| BankError::UnknownRecord(record_id.to_owned()))
    }

    fn record(&self, record_id: &str) -> Result<&BankRecord, BankError> {
        self.records.get(record_id).ok_or_else(|| BankError::UnknownRecord(record_id.to_owned()))
    }

    /// Persists then applies.
    fn commit(&mut self, event: LedgerEvent) -> Result<(), BankError> {
        if let Some(w) = self.writer.as_mut() {
            let line = serde_json::to_string(&event).map_err(|e| BankError::Corrupt(e.to_string()))?;
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.apply(&event)
    }

    fn check(&self, record_id: &str, action: ReviewAction) -> Result<ReviewState, BankError> {
        let from = self.record(record_id)?.state;
        transition(from, action).ok_or(BankError::InvalidTransition { from, action })
    }
}

pub struct Bank {
    state: Mutex<BankState>,
    templates: RwLock<BTreeMap<String, AnnotationTemplate>>,
    ledger_path: Option<PathBuf>,
}

impl Bank {
    pub fn in_memory() -> Self {
        Self::with_state(BankState::default(), None)
    }

    fn with_state(state: BankState, ledger_path: Option<PathBuf>) -> Self {
        let templates = builtin_templates().into_iter().map(|t| (t.template_id.clone(), t)).collect();
        Self { state: Mutex::new(state), templates: RwLock::new(templates), ledger_path }
    }

    /// Opens (replaying) `dir/bank/ledger.jsonl`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BankError> {
        let bank_dir = dir.as_ref().join("bank");
        fs::create_dir_all(&bank_dir)?;
        let path = bank_dir.join("ledger.jsonl");
        let mut state = BankState::default();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: LedgerEvent =
                    serde_json::from_str(&line).map_err(|e| BankError::Corrupt(format!("line {}: {e}", n + 1)))?;
                state.apply(&event)?;
            }
        }
        state.writer = Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?));
        Ok(Self::with_state(state, Some(path)))
    }

    pub fn ledger_path(&self) -> Option<&Path> {
        self.ledger_path.as_deref()
    }

    pub fn register_template(&self, template: AnnotationTemplate) {
        self.templates.write().insert(template.template_id.clone(), template);
    }

    pub fn templates(&self) -> Vec<AnnotationTemplate> {
        self.templates.read().values().cloned().collect()
    }

    pub fn template(&self, template_id: &str) -> Option<AnnotationTemplate> {
        self.templates.read().get(template_id).cloned()
    }

    /// Deposits a sealed trace version (the root version when `version_id` is
    /// `None`). Canonically equal traces share one record.
    pub fn deposit(&self, traces: &TraceStore, trace_id: &str, version_id: Option<&str>) -> Result<BankRecord, BankError> {
        let version = match version_id {
            Some(v) => v.to_owned(),
            None => traces.root_version(trace_id)?,
        };
        if !traces.is_sealed(trace_id, Some(&version))? {
            return Err(BankError::UnsealedTrace(trace_id.to_owned()));
        }
        let projection = project_version(traces, trace_id, Some(&version))?;
        self.deposit_projection(trace_id, &version, projection)
    }

    pub fn deposit_projection(
        &self,
        trace_id: &str,
        version_id: &str,
        projection: TraceProjection,
    ) -> Result<BankRecord, BankError> {
        let digest = canonical_digest(&projection);
        let now = ids::now_ms();
        let mut state = self.state.lock();
        if let Some(existing) = state.by_digest.get(&digest).cloned() {
            state.commit(LedgerEvent::Duplicate { record_id: existing.clone(), at: now })?;
            return Ok(state.record(&existing)?.clone());
        }
        let record = BankRecord {
            record_id: ids::new_id(),
            digest,
            trace_id: trace_id.to_owned(),
            version_id: version_id.to_owned(),
            priority: infer_priority(&projection),
            occurrence_count: 1,
            state: ReviewState::Pending,
            template_id: None,
            annotation: None,
            audit_note: None,
            deposited_at: now,
            state_changed_at: now,
            projection,
        };
        state.commit(LedgerEvent::Deposited { record: Box::new(record.clone()) })?;
        Ok(record)
    }

    pub fn get(&self, record_id: &str) -> Result<BankRecord, BankError> {
        Ok(self.state.lock().record(record_id)?.clone())
    }

    /// Records ordered by (deposited_at, record_id), optionally filtered by state.
    pub fn list(&self, state_filter: Option<ReviewState>) -> Vec<BankRecord> {
        let mut out: Vec<BankRecord> = self
            .state
            .lock()
            .records
            .values()
            .filter(|r| state_filter.is_none_or(|s| r.state == s))
            .cloned()
            .collect();
        out.sort_by(|a, b| (a.deposited_at, &a.record_id).cmp(&(b.deposited_at, &b.record_id)));
        out
    }

    pub fn annotate(&self, record_id: &str, template_id: &str, payload: Value) -> Result<BankRecord, BankError> {
        let template = self.template(template_id).ok_or_else(|| BankError::UnknownTemplate(template_id.to_owned()))?;
        let mut state = self.state.lock();
        state.check(record_id, ReviewAction::Annotate)?;
        template.validate(&payload).map_err(BankError::TemplateViolation)?;
        state.commit(LedgerEvent::Annotated {
            record_id: record_id.to_owned(),
            template_id: template_id.to_owned(),
            annotation: payload,
            at: ids::now_ms(),
        })?;
        Ok(state.record(record_id)?.clone())
    }

    pub fn audit(&self, record_id: &str, verdict: Verdict, note: Option<String>) -> Result<BankRecord, BankError> {
        let action = match verdict {
            Verdict::Approve => ReviewAction::Approve,
            Verdict::Reject => ReviewAction::Reject,
        };
        let mut state = self.state.lock();
        state.check(record_id, action)?;
        state.commit(LedgerEvent::Audited { record_id: record_id.to_owned(), verdict, note, at: ids::now_ms() })?;
        Ok(state.record(record_id)?.clone())
    }

    /// Sends a rejected record back to review, clearing its annotation.
    pub fn reopen(&self, record_id: &str) -> Result<BankRecord, BankError> {
        let mut state = self.state.lock();
        state.check(record_id, ReviewAction::Reopen)?;
        state.commit(LedgerEvent::Reopened { record_id: record_id.to_owned(), at: ids::now_ms() })?;
        Ok(state.record(record_id)?.clone())
    }

    /// Samples from approved records only, in (deposited_at, record_id) order.
    pub fn export_knowledge(&self, filter: &ExportFilter) -> Vec<KnowledgeSample> {
        let templates = self.templates.read();
        self.list(Some(ReviewState::Approved))
            .into_iter()
            .filter(|r| filter.priority.is_none_or(|p| r.priority == p))
            .filter(|r| filter.template.as_ref().is_none_or(|t| r.template_id.as_ref() == Some(t)))
            .filter(|r| filter.since.is_none_or(|s| r.deposited_at >= s))
            .filter_map(|r| {
                let template_id = r.template_id.clone()?;
                let annotation = r.annotation.as_ref()?;
                let payload = match templates.get(&template_id) {
                    Some(t) => t.project(annotation),
                    None => annotation.clone(),
                };
                Some(KnowledgeSample {
                    sample_id: format!("ks-{}", r.record_id),
                    record_id: r.record_id,
                    template_id,
                    priority: r.priority,
                    payload,
                    approved_at: r.state_changed_at,
                })
            })
            .collect()
    }

    pub fn prompt_versions(&self, agent: &str) -> Vec<PromptVersion> {
        self.state.lock().prompts.get(agent).cloned().unwrap_or_default()
    }

    /// Currently applied prompt of every agent that has a version history.
    pub fn applied_prompts(&self) -> Vec<PromptVersion> {
        self.state.lock().prompts.values().filter_map(|vs| vs.iter().find(|v| v.applied).cloned()).collect()
    }

    /// Builds the optimizer prompt for `agent` from its approved traces.
    pub fn optimizer_prompt(&self, agent: &str, current_prompt: &str) -> Result<String, BankError> {
        let approved: Vec<BankRecord> =
            self.list(Some(ReviewState::Approved)).into_iter().filter(|r| r.projection.involves(agent)).collect();
        if approved.is_empty() {
            return Err(BankError::NoApprovedTraces(agent.to_owned()));
        }
        let excerpts: Vec<String> = approved
            .iter()
            .take(OPTIMIZER_EXCERPTS)
            .map(|r| {
                let mut text = canonical_json(&json!({ "calls": r.projection.calls, "annotation": r.annotation }));
                if text.len() > OPTIMIZER_EXCERPT_BYTES {
                    let mut cut = OPTIMIZER_EXCERPT_BYTES;
                    while !text.is_char_boundary(cut) {
                        cut -= 1;
                    }
                    text.truncate(cut);
                    text.push_str("...");
                }
                format!("- {text}")
            })
            .collect();
        Ok(OPTIMIZE_PROMPT_TEMPLATE
            .replace("{agent}", agent)
            .replace("{current_prompt}", current_prompt)
            .replace("{excerpts}", &excerpts.join("\n")))
    }

    /// Asks `model` for a better system prompt and stores it unapplied.
    pub fn optimize_prompt(&self, agent: &str, registry: &Registry, model: &dyn ChatModel) -> Result<PromptVersion, BankError> {
        let spec = registry.resolve(agent).map_err(|_| BankError::UnknownAgent(agent.to_owned()))?;
        let cfg = spec.agent_config().map_err(|_| BankError::UnknownAgent(agent.to_owned()))?;
        let meta_prompt = self.optimizer_prompt(agent, &cfg.system_prompt)?;
        let completion = model
            .complete(&[ChatMessage::user(meta_prompt)], &ids::new_id())
            .map_err(|e| BankError::ModelUnavailable(e.to_string()))?;
        let (prompt, rationale) = split_rationale(&completion);

        let mut state = self.state.lock();
        let now = ids::now_ms();
        if state.prompts.get(agent).is_none_or(Vec::is_empty) {
            state.commit(LedgerEvent::PromptProposed {
                version: PromptVersion {
                    agent: agent.to_owned(),
                    version: 1,
                    prompt: cfg.system_prompt.clone(),
                    parent: None,
                    rationale: "initial prompt".into(),
                    applied: true,
                    created_at: now,
                },
            })?;
        }
        let versions = &state.prompts[agent];
        let next = versions.iter().map(|v| v.version).max().unwrap_or(0) + 1;
        let parent = versions.iter().find(|v| v.applied).map(|v| v.version).or(Some(next - 1));
        let version = PromptVersion {
            agent: agent.to_owned(),
            version: next,
            prompt,
            parent,
            rationale,
            applied: false,
            created_at: now,
        };
        state.commit(LedgerEvent::PromptProposed { version: version.clone() })?;
        Ok(version)
    }

    /// Marks `version` as the applied prompt and hot-updates the agent spec.
    pub fn apply_prompt(&self, agent: &str, version: u32, registry: &Registry) -> Result<PromptVersion, BankError> {
        let mut state = self.state.lock();
        let chosen = state
            .prompts
            .get(agent)
            .and_then(|vs| vs.iter().find(|v| v.version == version))
            .cloned()
            .ok_or_else(|| BankError::UnknownPromptVersion { agent: agent.to_owned(), version })?;
        registry
            .update_config(agent, "system_prompt", Value::String(chosen.prompt.clone()))
            .map_err(|_| BankError::UnknownAgent(agent.to_owned()))?;
        state.commit(LedgerEvent::PromptApplied { agent: agent.to_owned(), version, at: ids::now_ms() })?;
        Ok(PromptVersion { applied: true, ..chosen })
    }
}

fn split_rationale(completion: &str) -> (String, String) {
    let lines: Vec<&str> = completion.lines().collect();
    match lines.iter().rposition(|l| l.trim_start().to_ascii_lowercase().starts_with("rationale:")) {
        Some(i) => {
            let rationale = lines[i..].join("\n");
            let rationale = rationale.trim_start()["rationale:".len()..].trim().to_owned();
            (lines[..i].join("\n").trim().to_owned(), rationale)
        }
        None => (completion.trim().to_owned(), String::new()),
    }
}

/// Loads `question`/`answer` samples into a lookup table.
pub fn load_knowledge(samples: &[KnowledgeSample], kb: &KnowledgeBase) -> usize {
    let mut loaded = 0;
    for s in samples {
        if let (Some(q), Some(a)) = (s.payload.get("question").and_then(Value::as_str), s.payload.get("answer")) {
            kb.insert(q, a.clone());
            loaded += 1;
        }
    }
    loaded
}

/// Writes samples as JSON lines.
pub fn write_samples(samples: &[KnowledgeSample], path: &Path) -> Result<(), BankError> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|e| BankError::Corrupt(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
