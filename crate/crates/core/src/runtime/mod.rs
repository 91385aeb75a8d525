//! Call execution: the five-stage lifecycle, dispatch by node kind, pause
//! points, and regeneration of recorded calls.

mod breakpoints;
mod replay;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::error::{RegistryError, TraceError};
use crate::ids;
use crate::lifecycle::{AspectRegistry, JoinPoint, LifecycleStage, Phase};
use crate::model::{ChatMessage, ModelRegistry};
use crate::node::{NodeKind, OxySpec, USER_CALLER};
use crate::planner::{self, ReactEnv};
use crate::registry::Registry;
use crate::request::{OxyRequest, OxyResponse, DEFAULT_MAX_CALL_DEPTH};
use crate::scopes::ScopeStore;
use crate::tools::ToolRegistry;
use crate::tracer::{self, EventDraft, OverrideDescription, TraceStore};

pub use breakpoints::{Breakpoints, PausedCall};
pub use replay::Overrides;
use replay::{ChildReplay, ReplayPlan, ReplayState};

pub const DEFAULT_BREAKPOINT_TIMEOUT_MS: u64 = 300_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanningMode {
    /// Agents choose callees with the ReAct loop.
    #[default]
    React,
    /// Agents call their permitted callees once each, in declared order.
    FixedFlow,
}

fn default_max_call_depth() -> usize {
    DEFAULT_MAX_CALL_DEPTH
}

fn default_breakpoint_timeout_ms() -> u64 {
    DEFAULT_BREAKPOINT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeOptions {
    #[serde(default = "default_max_call_depth")]
    pub max_call_depth: usize,
    #[serde(default)]
    pub planning_mode: PlanningMode,
    #[serde(default = "default_breakpoint_timeout_ms")]
    pub breakpoint_timeout_ms: u64,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            max_call_depth: DEFAULT_MAX_CALL_DEPTH,
            planning_mode: PlanningMode::React,
            breakpoint_timeout_ms: DEFAULT_BREAKPOINT_TIMEOUT_MS,
        }
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("no entrypoint agent configured")]
    NoEntrypoint,
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Outcome of one root run (a chat or a regeneration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub trace_id: String,
    pub version_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<String>,
    pub request_id: String,
    pub root_call_id: String,
    pub response: OxyResponse,
}

impl RunResult {
    pub fn answer_text(&self) -> String {
        self.response.output_text()
    }
}

/// Shared by every call of one run.
struct RunCtx {
    trace_id: String,
    version_id: String,
    replay: Option<Mutex<ReplayState>>,
}

/// Per-call replay and override state.
#[derive(Default)]
struct Frame {
    /// Recorded counterpart of this call when regenerating.
    recorded: Option<String>,
    children: AtomicUsize,
    /// Leading events of this call that already sit in the inherited prefix.
    suppress: usize,
    system_prompt: Option<String>,
    /// Model binding override; agents pass it on to their model calls.
    binding: Option<String>,
}

impl Frame {
    fn next_ordinal(&self) -> usize {
        self.children.fetch_add(1, Ordering::SeqCst)
    }
}

/// Result of the Execute stage.
struct Executed {
    result: Result<Value, String>,
    /// Output carried by the error envelope.
    error_output: Value,
    /// Extra fields for the Execute/After event.
    extra: Map<String, Value>,
}

impl Executed {
    fn from(result: Result<Value, String>) -> Self {
        Self { result, error_output: Value::Null, extra: Map::new() }
    }
}

struct Emitter<'a> {
    rt: &'a Runtime,
    ctx: &'a RunCtx,
    kind: NodeKind,
    suppress: usize,
    emitted: usize,
}

impl Emitter<'_> {
    fn emit(&mut self, req: &OxyRequest, stage: LifecycleStage, phase: Phase, output: Option<&Value>, mut payload: Map<String, Value>) {
        self.emitted += 1;
        if self.emitted <= self.suppress {
            return;
        }
        let jp = JoinPoint {
            stage,
            phase,
            node: &req.callee,
            kind: self.kind,
            call_id: &req.call_id,
            trace_id: &self.ctx.trace_id,
            arguments: &req.arguments,
            output,
        };
        let annotations = self.rt.aspects.fire(&jp);
        if !annotations.is_empty() {
            payload.insert("annotations".into(), json!(annotations));
        }
        for v in payload.values_mut() {
            *v = tracer::bounded_snapshot(std::mem::take(v));
        }
        let draft = EventDraft {
            call_id: req.call_id.clone(),
            parent_call_id: req.parent_call_id.clone(),
            node: req.callee.clone(),
            node_kind: self.kind,
            stage,
            phase,
            timestamp: ids::now_ms(),
            payload: Value::Object(payload),
        };
        if let Err(e) = self.rt.traces.record_event(&self.ctx.trace_id, &self.ctx.version_id, draft) {
            tracing::warn!(trace = %self.ctx.trace_id, error = %e, "dropping trace event");
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

pub struct Runtime {
    registry: Arc<Registry>,
    models: Arc<ModelRegistry>,
    tools: Arc<ToolRegistry>,
    aspects: Arc<AspectRegistry>,
    scopes: Arc<ScopeStore>,
    traces: Arc<TraceStore>,
    breakpoints: Arc<Breakpoints>,
    options: RwLock<RuntimeOptions>,
}

impl Runtime {
    pub fn new(traces: Arc<TraceStore>) -> Self {
        Self {
            registry: Arc::new(Registry::new()),
            models: Arc::new(ModelRegistry::new()),
            tools: Arc::new(ToolRegistry::with_builtins()),
            aspects: Arc::new(AspectRegistry::default()),
            scopes: Arc::new(ScopeStore::new()),
            traces,
            breakpoints: Arc::new(Breakpoints::default()),
            options: RwLock::new(RuntimeOptions::default()),
        }
    }

    pub fn in_memory() -> Self {
        Self::new(Arc::new(TraceStore::in_memory()))
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn models(&self) -> &Arc<ModelRegistry> {
        &self.models
    }

    pub fn tools(&self) -> &Arc<ToolRegistry> {
        &self.tools
    }

    pub fn aspects(&self) -> &Arc<AspectRegistry> {
        &self.aspects
    }

    pub fn scopes(&self) -> &Arc<ScopeStore> {
        &self.scopes
    }

    pub fn traces(&self) -> &Arc<TraceStore> {
        &self.traces
    }

    pub fn breakpoints(&self) -> &Arc<Breakpoints> {
        &self.breakpoints
    }

    pub fn options(&self) -> RuntimeOptions {
        self.options.read().clone()
    }

    pub fn set_options(&self, options: RuntimeOptions) {
        *self.options.write() = options;
    }

    pub fn entrypoint(&self) -> Option<String> {
        self.registry.entrypoints().into_iter().next()
    }

    /// Runs the entrypoint agent on `query`.
    pub fn chat(&self, query: &str, group_id: Option<&str>) -> Result<RunResult, RuntimeError> {
        let entry = self.entrypoint().ok_or(RuntimeError::NoEntrypoint)?;
        self.run(&entry, json!({ "query": query }).as_object().cloned().unwrap_or_default(), group_id)
    }

    /// Runs `node` as the root of a fresh trace, called by the user.
    pub fn run(&self, node: &str, arguments: Map<String, Value>, group_id: Option<&str>) -> Result<RunResult, RuntimeError> {
        self.registry.resolve(node)?;
        let trace_id = ids::new_id();
        let version_id = self.traces.begin_trace(&trace_id)?;
        let ctx = RunCtx { trace_id: trace_id.clone(), version_id: version_id.clone(), replay: None };
        let req = self.root_request(&ctx, node, arguments, group_id, ids::new_id(), None, None);
        self.finish_run(&ctx, req, Frame::default(), None)
    }

    #[allow(clippy::too_many_arguments)]
    fn root_request(
        &self,
        ctx: &RunCtx,
        node: &str,
        arguments: Map<String, Value>,
        group_id: Option<&str>,
        call_id: String,
        caller: Option<String>,
        call_chain: Option<Vec<String>>,
    ) -> OxyRequest {
        let caller = caller.unwrap_or_else(|| USER_CALLER.to_owned());
        OxyRequest {
            request_id: ids::new_id(),
            trace_id: ctx.trace_id.clone(),
            version_id: ctx.version_id.clone(),
            call_id,
            parent_call_id: None,
            call_chain: call_chain.unwrap_or_else(|| vec![caller.clone()]),
            caller,
            callee: node.to_owned(),
            arguments,
            group_id: group_id.map(str::to_owned),
            scope_handle: self.scopes.clone(),
        }
    }

    fn finish_run(
        &self,
        ctx: &RunCtx,
        req: OxyRequest,
        frame: Frame,
        parent_version: Option<String>,
    ) -> Result<RunResult, RuntimeError> {
        let request_id = req.request_id.clone();
        let root_call_id = req.call_id.clone();
        self.scopes.open_request(&request_id, req.group_id.as_deref());
        let response = self.execute_call(ctx, req, frame);
        self.scopes.close_request(&request_id);
        self.traces.seal(&ctx.trace_id, &ctx.version_id)?;
        Ok(RunResult {
            trace_id: ctx.trace_id.clone(),
            version_id: ctx.version_id.clone(),
            parent_version,
            request_id,
            root_call_id,
            response,
        })
    }

    /// Runs one prepared request through the lifecycle, recording into its
    /// trace and version. The caller seals the trace.
    pub fn call(&self, request: OxyRequest) -> OxyResponse {
        let ctx = RunCtx { trace_id: request.trace_id.clone(), version_id: request.version_id.clone(), replay: None };
        self.execute_call(&ctx, request, Frame::default())
    }

    fn pause_point(&self, ctx: &RunCtx, req: &mut OxyRequest, stage: LifecycleStage) -> Option<Map<String, Value>> {
        if !self.breakpoints.matches(&req.callee, stage) {
            return None;
        }
        let info = PausedCall {
            call_id: req.call_id.clone(),
            trace_id: ctx.trace_id.clone(),
            node: req.callee.clone(),
            stage,
            since_ms: ids::now_ms(),
        };
        let timeout = Duration::from_millis(self.options.read().breakpoint_timeout_ms);
        let overrides = self.breakpoints.wait(info, timeout)?;
        for (k, v) in &overrides {
            req.arguments.insert(k.clone(), v.clone());
        }
        Some(overrides)
    }

    fn execute_call(&self, ctx: &RunCtx, mut req: OxyRequest, frame: Frame) -> OxyResponse {
        let spec = match self.registry.resolve(&req.callee) {
            Ok(spec) => spec,
            Err(e) => return OxyResponse::error(e.to_string(), Value::Null),
        };
        let max_depth = self.options.read().max_call_depth;
        if req.call_chain.len() > max_depth {
            return OxyResponse::error(format!("max call depth {max_depth} exceeded at `{}`", req.callee), Value::Null);
        }
        let mut em = Emitter { rt: self, ctx, kind: spec.kind, suppress: frame.suppress, emitted: 0 };
        let mut timing = BTreeMap::new();
        let with_overrides = |overrides: Option<Map<String, Value>>| {
            let mut payload = Map::new();
            if let Some(o) = overrides {
                payload.insert("resume_overrides".into(), Value::Object(o));
            }
            payload
        };

        let t = Instant::now();
        em.emit(&req, LifecycleStage::PreProcess, Phase::Before, None, Map::new());
        let resumed = self.pause_point(ctx, &mut req, LifecycleStage::PreProcess);
        req.arguments.retain(|_, v| !v.is_null());
        em.emit(&req, LifecycleStage::PreProcess, Phase::After, None, with_overrides(resumed));
        timing.insert(LifecycleStage::PreProcess.as_str().to_owned(), elapsed_ms(t));

        let t = Instant::now();
        em.emit(&req, LifecycleStage::PreSaveData, Phase::Before, None, Map::new());
        let resumed = self.pause_point(ctx, &mut req, LifecycleStage::PreSaveData);
        let mut payload = with_overrides(resumed);
        payload.insert("input".into(), Value::Object(req.arguments.clone()));
        payload.insert("caller".into(), json!(req.caller));
        payload.insert("call_chain".into(), json!(req.call_chain));
        payload.insert("group_id".into(), json!(req.group_id));
        em.emit(&req, LifecycleStage::PreSaveData, Phase::After, None, payload);
        timing.insert(LifecycleStage::PreSaveData.as_str().to_owned(), elapsed_ms(t));

        let t = Instant::now();
        em.emit(&req, LifecycleStage::Execute, Phase::Before, None, Map::new());
        let resumed = self.pause_point(ctx, &mut req, LifecycleStage::Execute);
        let executed = self.dispatch(ctx, &req, &spec, &frame);
        let mut payload = with_overrides(resumed);
        payload.extend(executed.extra);
        if let Err(e) = &executed.result {
            payload.insert("error".into(), json!(e));
        }
        em.emit(&req, LifecycleStage::Execute, Phase::After, executed.result.as_ref().ok(), payload);
        timing.insert(LifecycleStage::Execute.as_str().to_owned(), elapsed_ms(t));

        let mut response = match executed.result {
            Ok(mut output) => {
                let t = Instant::now();
                em.emit(&req, LifecycleStage::PostProcess, Phase::Before, Some(&output), Map::new());
                let resumed = self.pause_point(ctx, &mut req, LifecycleStage::PostProcess);
                if spec.kind == NodeKind::Llm {
                    if let Value::String(s) = &output {
                        output = Value::String(s.trim().to_owned());
                    }
                }
                em.emit(&req, LifecycleStage::PostProcess, Phase::After, Some(&output), with_overrides(resumed));
                timing.insert(LifecycleStage::PostProcess.as_str().to_owned(), elapsed_ms(t));
                OxyResponse::ok(output)
            }
            Err(detail) => OxyResponse::error(detail, executed.error_output),
        };

        let t = Instant::now();
        em.emit(&req, LifecycleStage::FormatOutput, Phase::Before, Some(&response.output), Map::new());
        let resumed = self.pause_point(ctx, &mut req, LifecycleStage::FormatOutput);
        let mut payload = with_overrides(resumed);
        payload.insert("output".into(), response.output.clone());
        payload.insert("status".into(), json!(if response.is_ok() { "ok" } else { "error" }));
        payload.insert("error".into(), json!(response.error_detail));
        em.emit(&req, LifecycleStage::FormatOutput, Phase::After, Some(&response.output), payload);
        timing.insert(LifecycleStage::FormatOutput.as_str().to_owned(), elapsed_ms(t));

        response.timing = timing;
        response
    }

    fn dispatch(&self, ctx: &RunCtx, req: &OxyRequest, spec: &OxySpec, frame: &Frame) -> Executed {
        match spec.kind {
            NodeKind::Tool => Executed::from(self.run_tool(req, spec)),
            NodeKind::Llm => Executed::from(self.run_llm(req, spec, frame)),
            NodeKind::Flow => Executed::from(self.run_flow(ctx, req, spec, frame)),
            NodeKind::Agent => match self.options.read().planning_mode {
                PlanningMode::React => self.run_agent(ctx, req, spec, frame),
                PlanningMode::FixedFlow => {
                    let steps = spec.permitted_callees.iter().map(|c| (c.clone(), None)).collect();
                    Executed::from(self.run_steps(ctx, req, spec, frame, steps))
                }
            },
        }
    }

    fn run_tool(&self, req: &OxyRequest, spec: &OxySpec) -> Result<Value, String> {
        let cfg = spec.tool_config()?;
        let handler = self.tools.get(&cfg.handler).ok_or_else(|| format!("unknown tool handler `{}`", cfg.handler))?;
        handler.invoke(req, &cfg.params)
    }

    fn run_llm(&self, req: &OxyRequest, spec: &OxySpec, frame: &Frame) -> Result<Value, String> {
        let cfg = spec.llm_config()?;
        let binding = frame.binding.clone().unwrap_or(cfg.binding);
        let model = self.models.get(&binding).ok_or_else(|| format!("model unavailable: unknown binding `{binding}`"))?;
        let messages: Vec<ChatMessage> = match (req.arguments.get("messages"), req.arguments.get("prompt")) {
            (Some(m), _) => serde_json::from_value(m.clone()).map_err(|e| format!("invalid messages: {e}"))?,
            (None, Some(Value::String(p))) => vec![ChatMessage::user(p.clone())],
            _ => return Err("llm call needs `messages` or a `prompt` string".into()),
        };
        model.complete(&messages, &req.request_id).map(Value::String).map_err(|e| e.to_string())
    }

    fn run_agent(&self, ctx: &RunCtx, req: &OxyRequest, spec: &OxySpec, frame: &Frame) -> Executed {
        let mut agent = spec.clone();
        if let Some(prompt) = &frame.system_prompt {
            agent.config.insert("system_prompt".into(), json!(prompt));
        }
        let env = AgentEnv { rt: self, ctx, req, frame };
        let outcome = planner::run_react(&agent, &req.query_text(), &self.registry, &env);
        let mut extra = Map::new();
        extra.insert("memory".into(), json!(outcome.memory));
        extra.insert("rounds".into(), json!(outcome.rounds));
        match (outcome.answer, outcome.error) {
            (Some(answer), None) => Executed { result: Ok(answer), error_output: Value::Null, extra },
            (_, error) => Executed {
                result: Err(error.unwrap_or_else(|| "agent produced no answer".into())),
                error_output: json!({ "transcript": outcome.memory }),
                extra,
            },
        }
    }

    fn run_flow(&self, ctx: &RunCtx, req: &OxyRequest, spec: &OxySpec, frame: &Frame) -> Result<Value, String> {
        let cfg = spec.flow_config()?;
        let steps = cfg.steps.into_iter().map(|s| (s.callee, s.arguments)).collect();
        self.run_steps(ctx, req, spec, frame, steps)
    }

    /// Calls each step in order. Steps without explicit arguments receive
    /// `{"query": <previous output>}`; the first one gets the incoming query.
    fn run_steps(
        &self,
        ctx: &RunCtx,
        req: &OxyRequest,
        spec: &OxySpec,
        frame: &Frame,
        steps: Vec<(String, Option<Map<String, Value>>)>,
    ) -> Result<Value, String> {
        let mut previous = Value::String(req.query_text());
        for (callee, arguments) in steps {
            match planner::authorize(&spec.name, &callee, &self.registry).map_err(|e| e.to_string())? {
                planner::Authorization::Allowed => {}
                planner::Authorization::Denied(reason) => return Err(reason),
            }
            let args = arguments.unwrap_or_else(|| {
                let mut m = Map::new();
                m.insert("query".into(), previous.clone());
                m
            });
            let resp = self.child_call(ctx, req, frame, &callee, args, None);
            if !resp.is_ok() {
                return Err(format!("step `{callee}` failed: {}", resp.error_detail.unwrap_or_default()));
            }
            previous = resp.output;
        }
        Ok(previous)
    }

    fn child_call(
        &self,
        ctx: &RunCtx,
        parent: &OxyRequest,
        parent_frame: &Frame,
        callee: &str,
        arguments: Map<String, Value>,
        binding: Option<String>,
    ) -> OxyResponse {
        let ordinal = parent_frame.next_ordinal();
        let mut call_chain = parent.call_chain.clone();
        call_chain.push(parent.callee.clone());
        let mut req = OxyRequest {
            request_id: parent.request_id.clone(),
            trace_id: parent.trace_id.clone(),
            version_id: parent.version_id.clone(),
            call_id: ids::new_id(),
            parent_call_id: Some(parent.call_id.clone()),
            caller: parent.callee.clone(),
            callee: callee.to_owned(),
            arguments,
            group_id: parent.group_id.clone(),
            call_chain,
            scope_handle: parent.scope_handle.clone(),
        };
        let mut frame = Frame { binding, ..Frame::default() };
        if let Some(replay) = &ctx.replay {
            let step = replay.lock().child(parent_frame.recorded.as_deref(), ordinal, callee);
            match step {
                ChildReplay::Live => {}
                ChildReplay::Recorded(resp) => return resp,
                ChildReplay::Resume { call_id, suppress } => {
                    req.call_id = call_id.clone();
                    frame.recorded = Some(call_id);
                    frame.suppress = suppress;
                }
                ChildReplay::Target(overrides) => apply_overrides(&mut req, &mut frame, overrides),
            }
        }
        self.execute_call(ctx, req, frame)
    }

    /// Re-runs `call_id` of a sealed version under `overrides`, producing a new
    /// version. Everything recorded before the call is inherited, completed
    /// sibling calls are served from the record, and the call plus everything
    /// after it runs live.
    pub fn regenerate(
        &self,
        trace_id: &str,
        version_id: Option<&str>,
        call_id: &str,
        overrides: Overrides,
    ) -> Result<RunResult, RuntimeError> {
        let parent_version = match version_id {
            Some(v) => v.to_owned(),
            None => self.traces.root_version(trace_id)?,
        };
        if !self.traces.is_sealed(trace_id, Some(&parent_version))? {
            return Err(TraceError::UnsealedTrace(trace_id.to_owned()).into());
        }
        let events = self.traces.events(trace_id, Some(&parent_version))?;
        let graph = tracer::assemble(trace_id, &parent_version, None, &events);
        let target = graph.node(call_id).ok_or_else(|| TraceError::UnknownCall(call_id.to_owned()))?;
        self.validate_overrides(target.node_kind, &overrides)?;
        let root = graph.root().ok_or_else(|| TraceError::UnknownCall(call_id.to_owned()))?;
        let branch_seq = events
            .iter()
            .find(|e| e.call_id == call_id)
            .map(|e| e.seq)
            .ok_or_else(|| TraceError::UnknownCall(call_id.to_owned()))?;
        let root_input = events
            .iter()
            .find(|e| e.call_id == root.call_id && e.stage == LifecycleStage::PreSaveData && e.phase == Phase::After)
            .map(|e| e.payload.clone())
            .ok_or_else(|| TraceError::Corrupt(format!("root call `{}` has no input snapshot", root.call_id)))?;
        let arguments = root_input.get("input").and_then(Value::as_object).cloned().unwrap_or_default();
        let group_id = root_input.get("group_id").and_then(Value::as_str).map(str::to_owned);
        let caller = root_input.get("caller").and_then(Value::as_str).map(str::to_owned);
        let call_chain: Option<Vec<String>> =
            root_input.get("call_chain").and_then(|v| serde_json::from_value(v.clone()).ok());

        let new_version = self.traces.branch(
            trace_id,
            &parent_version,
            branch_seq,
            OverrideDescription { call_id: call_id.to_owned(), fields: overrides.describe() },
        )?;
        let plan = ReplayPlan::build(&graph, &events, call_id, branch_seq, overrides.clone());
        let root_is_target = root.call_id == call_id;
        let root_rec_prefix = plan.calls.get(&root.call_id).map(|r| r.prefix_events).unwrap_or(0);
        let ctx = RunCtx {
            trace_id: trace_id.to_owned(),
            version_id: new_version.clone(),
            replay: Some(Mutex::new(ReplayState { plan, live: root_is_target })),
        };
        let (root_call_id, mut frame) = if root_is_target {
            (ids::new_id(), Frame::default())
        } else {
            let frame = Frame { recorded: Some(root.call_id.clone()), suppress: root_rec_prefix, ..Frame::default() };
            (root.call_id.clone(), frame)
        };
        let mut req = self.root_request(&ctx, &root.node, arguments, group_id.as_deref(), root_call_id, caller, call_chain);
        if root_is_target {
            apply_overrides(&mut req, &mut frame, overrides);
        }
        self.finish_run(&ctx, req, frame, Some(parent_version))
    }

    fn validate_overrides(&self, kind: NodeKind, overrides: &Overrides) -> Result<(), TraceError> {
        if overrides.system_prompt.is_some() && kind != NodeKind::Agent {
            return Err(TraceError::OverrideInvalid(format!("system_prompt applies to agent calls, not {kind}")));
        }
        if let Some(binding) = &overrides.model_binding {
            if !matches!(kind, NodeKind::Agent | NodeKind::Llm) {
                return Err(TraceError::OverrideInvalid(format!("model_binding applies to agent or llm calls, not {kind}")));
            }
            if !self.models.contains(binding) {
                return Err(TraceError::OverrideInvalid(format!("model binding `{binding}` is not registered")));
            }
        }
        Ok(())
    }
}

fn apply_overrides(req: &mut OxyRequest, frame: &mut Frame, overrides: Overrides) {
    if let Some(args) = overrides.arguments {
        req.arguments.extend(args);
    }
    if overrides.system_prompt.is_some() {
        frame.system_prompt = overrides.system_prompt;
    }
    if overrides.model_binding.is_some() {
        frame.binding = overrides.model_binding;
    }
}

struct AgentEnv<'a> {
    rt: &'a Runtime,
    ctx: &'a RunCtx,
    req: &'a OxyRequest,
    frame: &'a Frame,
}

impl ReactEnv for AgentEnv<'_> {
    fn complete(&self, model_node: &str, messages: Vec<ChatMessage>) -> Result<String, String> {
        let mut args = Map::new();
        args.insert("messages".into(), json!(messages));
        let resp = self.rt.child_call(self.ctx, self.req, self.frame, model_node, args, self.frame.binding.clone());
        if resp.is_ok() {
            Ok(resp.output_text())
        } else {
            Err(resp.error_detail.unwrap_or_default())
        }
    }

    fn delegate(&self, callee: &str, arguments: Map<String, Value>) -> OxyResponse {
        self.rt.child_call(self.ctx, self.req, self.frame, callee, arguments, None)
    }
}
