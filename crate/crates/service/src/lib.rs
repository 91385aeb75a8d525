//! HTTP and SSE facade over the runtime, trace store and bank.
//!
//! [`Workspace`] holds the shared state and exposes one method per endpoint;
//! the HTTP handlers in [`http`] and the command line both call these methods,
//! so a CLI result and the matching endpoint response are the same value.

pub mod http;

use std::path::Path;
use std::sync::Arc;

use oxy_core::bank::{
    write_samples, Bank, BankError, BankRecord, ExportFilter, KnowledgeSample, PromptVersion, ReviewState, Verdict,
};
use oxy_core::config::{ConfigError, MasConfig};
use oxy_core::error::{RegistryError, TraceError};
use oxy_core::lifecycle::LifecycleStage;
use oxy_core::node::NodeKind;
use oxy_core::registry::TopologyView;
use oxy_core::runtime::{Overrides, PausedCall, RunResult, Runtime, RuntimeError};
use oxy_core::scopes::ScopeSnapshot;
use oxy_core::tracer::{export_dot, ExecutionGraph, PathGraph, TimingBreakdown, TraceEvent, TraceStore, TraceSummary, TraceVersion};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Response body of every JSON endpoint. Exactly one of `data` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// Set when a failed run still produced a trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
}

impl ApiEnvelope {
    pub fn success(data: Value) -> Self {
        Self { ok: true, data: Some(data), error: None }
    }

    pub fn failure(err: &ApiError) -> Self {
        Self {
            ok: false,
            data: None,
            error: Some(ErrorBody { code: err.code.clone(), message: err.message.clone(), trace_id: err.trace_id.clone() }),
        }
    }

    pub fn from_result<T: Serialize>(result: &Result<T, ApiError>) -> Self {
        match result {
            Ok(v) => Self::success(serde_json::to_value(v).unwrap_or(Value::Null)),
            Err(e) => Self::failure(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    pub trace_id: Option<String>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.to_owned(), message: message.into(), trace_id: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "BadRequest", message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(404, code, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<TraceError> for ApiError {
    fn from(e: TraceError) -> Self {
        let (status, code) = match &e {
            TraceError::UnknownTrace(_) => (404, "UnknownTrace"),
            TraceError::UnknownVersion { .. } => (404, "UnknownVersion"),
            TraceError::UnknownCall(_) => (404, "UnknownCall"),
            TraceError::SealedTrace(_) => (409, "SealedTrace"),
            TraceError::UnsealedTrace(_) => (409, "UnsealedTrace"),
            TraceError::OverrideInvalid(_) => (409, "OverrideInvalid"),
            TraceError::Corrupt(_) => (500, "CorruptTrace"),
            TraceError::Io(_) => (500, "Io"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let (status, code) = match &e {
            RegistryError::NodeNotFound(_) => (404, "NodeNotFound"),
            RegistryError::NameConflict(_) => (409, "NameConflict"),
            RegistryError::InvalidSpec(_) => (422, "InvalidSpec"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::NoEntrypoint => Self::new(503, "NoEntrypoint", e.to_string()),
            RuntimeError::Registry(r) => r.into(),
            RuntimeError::Trace(t) => t.into(),
        }
    }
}

impl From<BankError> for ApiError {
    fn from(e: BankError) -> Self {
        let e = match e {
            BankError::Trace(t) => return t.into(),
            other => other,
        };
        let (status, code) = match &e {
            BankError::Trace(_) => (500, "Trace"),
            BankError::UnsealedTrace(_) => (409, "UnsealedTrace"),
            BankError::UnknownRecord(_) => (404, "UnknownRecord"),
            BankError::InvalidTransition { .. } => (409, "InvalidTransition"),
            BankError::UnknownTemplate(_) => (422, "UnknownTemplate"),
            BankError::TemplateViolation(_) => (422, "TemplateViolation"),
            BankError::NoApprovedTraces(_) => (409, "NoApprovedTraces"),
            BankError::ModelUnavailable(_) => (502, "ModelUnavailable"),
            BankError::UnknownAgent(_) => (404, "UnknownAgent"),
            BankError::UnknownPromptVersion { .. } => (404, "UnknownPromptVersion"),
            BankError::Io(_) | BankError::Corrupt(_) => (500, "BankStorage"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        Self::new(422, "InvalidConfig", e.to_string())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChatRequest {
    pub query: String,
    #[serde(default)]
    pub group_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub trace_id: String,
    pub version_id: String,
    pub answer: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegenerateRequest {
    /// Parent version; the root version when absent.
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerateReply {
    pub trace_id: String,
    pub new_version_id: String,
    pub parent_version: Option<String>,
    pub status: String,
    pub answer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakpointRequest {
    pub node: String,
    pub stage: String,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointEntry {
    pub node: String,
    pub stage: LifecycleStage,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResumeRequest {
    pub call_id: String,
    #[serde(default)]
    pub overrides: Option<Map<String, Value>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepositRequest {
    pub trace_id: String,
    #[serde(default)]
    pub version_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub template_id: String,
    pub fields: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRequest {
    pub verdict: Verdict,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OptimizeRequest {
    /// Model binding for the optimizer; the agent's own binding when absent.
    #[serde(default)]
    pub binding: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApplyRequest {
    pub version: u32,
}

/// Runtime, trace store and bank sharing one storage directory.
pub struct Workspace {
    runtime: Arc<Runtime>,
    bank: Arc<Bank>,
}

impl Workspace {
    /// Opens `store` (or keeps everything in memory) and loads `config`.
    pub fn open(store: Option<&Path>, config: Option<&MasConfig>) -> Result<Self, ApiError> {
        let (traces, bank) = match store {
            Some(dir) => (TraceStore::open(dir)?, Bank::open(dir)?),
            None => (TraceStore::in_memory(), Bank::in_memory()),
        };
        let runtime = Runtime::new(Arc::new(traces));
        if let Some(cfg) = config {
            cfg.apply(&runtime)?;
        }
        for applied in bank.applied_prompts() {
            if runtime.registry().contains(&applied.agent) {
                runtime.registry().update_config(&applied.agent, "system_prompt", Value::String(applied.prompt))?;
            }
        }
        Ok(Self { runtime: Arc::new(runtime), bank: Arc::new(bank) })
    }

    pub fn from_parts(runtime: Arc<Runtime>, bank: Arc<Bank>) -> Self {
        Self { runtime, bank }
    }

    pub fn runtime(&self) -> &Arc<Runtime> {
        &self.runtime
    }

    pub fn bank(&self) -> &Arc<Bank> {
        &self.bank
    }

    pub fn traces(&self) -> &Arc<TraceStore> {
        self.runtime.traces()
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<ChatReply, ApiError> {
        if req.query.trim().is_empty() {
            return Err(ApiError::bad_request("query must be non-empty"));
        }
        let run = self.runtime.chat(&req.query, req.group_id.as_deref())?;
        run_failure(&run)?;
        Ok(ChatReply { answer: run.answer_text(), trace_id: run.trace_id, version_id: run.version_id })
    }

    pub fn list_traces(&self) -> Vec<TraceSummary> {
        self.traces().list()
    }

    pub fn graph(&self, trace_id: &str, version: Option<&str>) -> Result<ExecutionGraph, ApiError> {
        Ok(self.traces().assemble_graph(trace_id, version)?)
    }

    /// Calls merged by name path: one node per distinct route through the MAS.
    pub fn path_graph(&self, trace_id: &str, version: Option<&str>) -> Result<PathGraph, ApiError> {
        Ok(self.graph(trace_id, version)?.collapse_by_path())
    }

    pub fn dot(&self, trace_id: &str, version: Option<&str>) -> Result<String, ApiError> {
        Ok(export_dot(&self.graph(trace_id, version)?))
    }

    pub fn timing(&self, trace_id: &str, version: Option<&str>) -> Result<TimingBreakdown, ApiError> {
        Ok(self.traces().timing_report(trace_id, version)?)
    }

    pub fn versions(&self, trace_id: &str) -> Result<Vec<TraceVersion>, ApiError> {
        Ok(self.traces().versions(trace_id)?)
    }

    pub fn events(&self, trace_id: &str, version: Option<&str>, from_seq: u64) -> Result<Vec<TraceEvent>, ApiError> {
        Ok(self.traces().events(trace_id, version)?.into_iter().filter(|e| e.seq >= from_seq).collect())
    }

    pub fn regenerate(&self, trace_id: &str, call_id: &str, req: &RegenerateRequest) -> Result<RegenerateReply, ApiError> {
        let run = self.runtime.regenerate(trace_id, req.version.as_deref(), call_id, req.overrides.clone())?;
        Ok(RegenerateReply {
            trace_id: run.trace_id.clone(),
            new_version_id: run.version_id.clone(),
            parent_version: run.parent_version.clone(),
            status: if run.response.is_ok() { "ok".into() } else { "error".into() },
            answer: run.answer_text(),
        })
    }

    pub fn set_breakpoint(&self, req: &BreakpointRequest) -> Result<Vec<BreakpointEntry>, ApiError> {
        let stage = LifecycleStage::parse(&req.stage)
            .ok_or_else(|| ApiError::bad_request(format!("unknown stage `{}`", req.stage)))?;
        if !self.runtime.registry().contains(&req.node) {
            return Err(RegistryError::NodeNotFound(req.node.clone()).into());
        }
        self.runtime.breakpoints().set(&req.node, stage, req.enabled);
        Ok(self.breakpoints())
    }

    pub fn breakpoints(&self) -> Vec<BreakpointEntry> {
        self.runtime.breakpoints().list().into_iter().map(|(node, stage)| BreakpointEntry { node, stage }).collect()
    }

    pub fn paused(&self) -> Vec<PausedCall> {
        self.runtime.breakpoints().paused()
    }

    pub fn resume(&self, req: &ResumeRequest) -> Result<Value, ApiError> {
        if self.runtime.breakpoints().resume(&req.call_id, req.overrides.clone()) {
            Ok(serde_json::json!({ "resumed": req.call_id }))
        } else {
            Err(ApiError::not_found("UnknownCall", format!("no paused call `{}`", req.call_id)))
        }
    }

    pub fn deposit(&self, req: &DepositRequest) -> Result<BankRecord, ApiError> {
        Ok(self.bank.deposit(self.traces(), &req.trace_id, req.version_id.as_deref())?)
    }

    pub fn records(&self, state: Option<&str>) -> Result<Vec<BankRecord>, ApiError> {
        let filter = match state {
            Some(s) => Some(ReviewState::parse(s).ok_or_else(|| ApiError::bad_request(format!("unknown state `{s}`")))?),
            None => None,
        };
        Ok(self.bank.list(filter))
    }

    pub fn record(&self, record_id: &str) -> Result<BankRecord, ApiError> {
        Ok(self.bank.get(record_id)?)
    }

    pub fn annotate(&self, record_id: &str, req: &AnnotateRequest) -> Result<BankRecord, ApiError> {
        Ok(self.bank.annotate(record_id, &req.template_id, req.fields.clone())?)
    }

    pub fn audit(&self, record_id: &str, req: &AuditRequest) -> Result<BankRecord, ApiError> {
        Ok(self.bank.audit(record_id, req.verdict, req.note.clone())?)
    }

    pub fn reopen(&self, record_id: &str) -> Result<BankRecord, ApiError> {
        Ok(self.bank.reopen(record_id)?)
    }

    pub fn export(&self, filter: &ExportFilter) -> Vec<KnowledgeSample> {
        self.bank.export_knowledge(filter)
    }

    pub fn export_to(&self, filter: &ExportFilter, path: &Path) -> Result<Vec<KnowledgeSample>, ApiError> {
        let samples = self.export(filter);
        write_samples(&samples, path)?;
        Ok(samples)
    }

    pub fn prompt_versions(&self, agent: &str) -> Result<Vec<PromptVersion>, ApiError> {
        self.agent_binding(agent)?;
        Ok(self.bank.prompt_versions(agent))
    }

    pub fn optimize_prompt(&self, agent: &str, req: &OptimizeRequest) -> Result<PromptVersion, ApiError> {
        let binding = match &req.binding {
            Some(b) => b.clone(),
            None => self.agent_binding(agent)?,
        };
        let model = self
            .runtime
            .models()
            .get(&binding)
            .ok_or_else(|| ApiError::from(BankError::ModelUnavailable(format!("binding `{binding}` is not registered"))))?;
        Ok(self.bank.optimize_prompt(agent, self.runtime.registry(), model.as_ref())?)
    }

    pub fn apply_prompt(&self, agent: &str, req: &ApplyRequest) -> Result<PromptVersion, ApiError> {
        Ok(self.bank.apply_prompt(agent, req.version, self.runtime.registry())?)
    }

    pub fn topology(&self) -> TopologyView {
        self.runtime.registry().topology()
    }

    pub fn scopes(&self, request_id: &str) -> Result<ScopeSnapshot, ApiError> {
        self.runtime
            .scopes()
            .snapshot(request_id)
            .ok_or_else(|| ApiError::not_found("UnknownRequest", format!("request `{request_id}` is not live")))
    }

    /// Binding name of the agent's model node.
    fn agent_binding(&self, agent: &str) -> Result<String, ApiError> {
        let unknown = || ApiError::from(BankError::UnknownAgent(agent.to_owned()));
        let spec = self.runtime.registry().resolve(agent).map_err(|_| unknown())?;
        if spec.kind != NodeKind::Agent {
            return Err(unknown());
        }
        let model = spec.agent_config().map_err(|_| unknown())?.model;
        let llm = self.runtime.registry().resolve(&model)?;
        Ok(llm.llm_config().map_err(ApiError::bad_request)?.binding)
    }
}

fn run_failure(run: &RunResult) -> Result<(), ApiError> {
    if run.response.is_ok() {
        return Ok(());
    }
    let detail = run.response.error_detail.clone().unwrap_or_default();
    Err(ApiError { status: 500, code: "RunFailed".into(), message: detail, trace_id: Some(run.trace_id.clone()) })
}
