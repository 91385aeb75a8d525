//! Acceptance suite. Runs every criterion in turn and prints one PASS/FAIL line
//! per criterion; exits nonzero when any criterion fails.

mod support;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use oxy_core::bank::{
    load_knowledge, md5_hex, Bank, BankError, ExportFilter, Priority, ProjectedCall, TraceProjection, Verdict,
};
use oxy_core::config::MasConfig;
use oxy_core::error::ModelError;
use oxy_core::lifecycle::{JoinPoint, LifecycleStage, Phase, Selector};
use oxy_core::model::{ChatMessage, ChatModel, Role};
use oxy_core::node::{NodeKind, OxySpec, USER_CALLER};
use oxy_core::request::OxyRequest;
use oxy_core::runtime::{Overrides, Runtime};
use oxy_core::scopes::ScopeLevel;
use oxy_core::tracer::{CallStatus, EventDraft, ExecutionGraph, TraceStore};
use parking_lot::Mutex;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use serde_json::{json, Value};
use support::{cli_json, file_assistant, parse_sse, Http};

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(u32, &str, Check); 11] = [
        (1, "end-to-end scripted run", c1_end_to_end),
        (2, "permission safety fuzz", c2_permission_fuzz),
        (3, "replanning after denial", c3_replanning),
        (4, "lifecycle order", c4_lifecycle_order),
        (5, "scope isolation", c5_scope_isolation),
        (6, "dedup and md5", c6_dedup),
        (7, "gating state machine", c7_gating),
        (8, "deterministic replay and regeneration", c8_replay),
        (9, "timing decomposition", c9_timing),
        (10, "bank-backed knowledge ablation", c10_ablation),
        (11, "cli/service parity", c11_parity),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(panic) => Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} [{name}]: PASS ({secs:.2}s) {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} [{name}]: FAIL ({secs:.2}s) {why}");
            }
        }
    }
    println!("acceptance: {}/11 passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn file_assistant_runtime() -> Runtime {
    MasConfig::load(&file_assistant()).unwrap().build_runtime(Arc::new(TraceStore::in_memory())).unwrap()
}

fn config_runtime(json_text: &str) -> Runtime {
    MasConfig::parse(json_text, false).unwrap().build_runtime(Arc::new(TraceStore::in_memory())).unwrap()
}

/// Execute/After payload of an agent call.
fn execute_after(rt: &Runtime, trace: &str, version: Option<&str>, call_id: &str) -> Value {
    rt.traces()
        .events(trace, version)
        .unwrap()
        .into_iter()
        .find(|e| e.call_id == call_id && e.stage == LifecycleStage::Execute && e.phase == Phase::After)
        .map(|e| e.payload)
        .unwrap_or(Value::Null)
}

fn memory_entries(payload: &Value) -> Vec<Value> {
    payload.get("memory").and_then(Value::as_array).cloned().unwrap_or_default()
}

#[derive(Deserialize)]
struct GraphOracle {
    query: String,
    answer: String,
    call_nodes: Vec<CountedNode>,
    call_edges: Vec<CountedEdge>,
    path_nodes: Vec<PathCount>,
    path_edges: Vec<PathPair>,
    call_order: Vec<String>,
}

#[derive(Deserialize)]
struct CountedNode {
    node: String,
    kind: NodeKind,
    count: usize,
}

#[derive(Deserialize)]
struct CountedEdge {
    from: String,
    to: String,
    count: usize,
}

#[derive(Deserialize)]
struct PathCount {
    path: String,
    calls: usize,
}

#[derive(Deserialize, PartialEq, Eq, PartialOrd, Ord, Debug)]
struct PathPair {
    from: String,
    to: String,
}

fn oracle() -> GraphOracle {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/time_query.graph.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn c1_end_to_end() -> Result<String, String> {
    let oracle = oracle();
    let started = Instant::now();
    let rt = file_assistant_runtime();
    let run = rt.chat(&oracle.query, None).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(run.response.is_ok(), "run failed: {:?}", run.response.error_detail);
    ensure!(run.answer_text() == oracle.answer, "answer {:?}", run.answer_text());
    ensure!(elapsed < Duration::from_secs(2), "took {elapsed:?}");

    let graph = rt.traces().assemble_graph(&run.trace_id, None).unwrap();
    let mut nodes: BTreeMap<(String, NodeKind), usize> = BTreeMap::new();
    for n in &graph.nodes {
        *nodes.entry((n.node.clone(), n.node_kind)).or_default() += 1;
    }
    let expected_nodes: BTreeMap<(String, NodeKind), usize> =
        oracle.call_nodes.iter().map(|n| ((n.node.clone(), n.kind), n.count)).collect();
    ensure!(nodes == expected_nodes, "node multiset {nodes:?}");

    let mut edges: BTreeMap<(String, String), usize> = BTreeMap::new();
    for e in &graph.edges {
        let from = graph.node(&e.from).unwrap().node.clone();
        let to = graph.node(&e.to).unwrap().node.clone();
        *edges.entry((from, to)).or_default() += 1;
    }
    let expected_edges: BTreeMap<(String, String), usize> =
        oracle.call_edges.iter().map(|e| ((e.from.clone(), e.to.clone()), e.count)).collect();
    ensure!(edges == expected_edges, "edge multiset {edges:?}");

    let order: Vec<String> = graph.nodes.iter().map(|n| n.node.clone()).collect();
    ensure!(order == oracle.call_order, "call order {order:?}");

    let paths = graph.collapse_by_path();
    let got_paths: Vec<(String, usize)> = paths.nodes.iter().map(|p| (p.path.clone(), p.calls)).collect();
    let want_paths: Vec<(String, usize)> = oracle.path_nodes.iter().map(|p| (p.path.clone(), p.calls)).collect();
    ensure!(got_paths == want_paths, "path nodes {got_paths:?}");
    let mut got_edges: Vec<PathPair> =
        paths.edges.iter().map(|e| PathPair { from: e.from.clone(), to: e.to.clone() }).collect();
    got_edges.sort();
    let mut want_edges = oracle.path_edges;
    want_edges.sort();
    ensure!(got_edges == want_edges, "path edges {got_edges:?}");
    Ok(format!("answer={} calls={} routes={} in {:?}", run.answer_text(), graph.nodes.len(), paths.nodes.len(), elapsed))
}

/// Scripted policy for the fuzz: each agent follows a fixed list of callee
/// attempts, one per round, then answers. The step is the number of results
/// already in its memory.
struct PolicyModel {
    plans: HashMap<String, Vec<String>>,
    attempts: Mutex<Vec<(String, String)>>,
}

impl ChatModel for PolicyModel {
    fn complete(&self, messages: &[ChatMessage], _session: &str) -> Result<String, ModelError> {
        let system = messages.iter().find(|m| m.role == Role::System).map(|m| m.content.clone()).unwrap_or_default();
        let agent = system.strip_prefix("policy:").unwrap_or_default().to_owned();
        let user = messages.iter().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("");
        let step = user
            .lines()
            .filter(|l| l.starts_with("Observation from ") || l.starts_with("Failure from "))
            .count();
        match self.plans.get(&agent).and_then(|p| p.get(step)) {
            Some(callee) => {
                self.attempts.lock().push((agent, callee.clone()));
                Ok(json!({ "tool_name": callee, "arguments": { "query": format!("step {step}") } }).to_string())
            }
            None => Ok("done".into()),
        }
    }
}

struct FuzzCase {
    runtime: Runtime,
    model: Arc<PolicyModel>,
}

fn fuzz_case(seed: u64) -> FuzzCase {
    let mut rng = StdRng::seed_from_u64(seed);
    let n_agents = rng.gen_range(1..=4);
    let n_tools = rng.gen_range(1..=4);
    let agents: Vec<String> = (0..n_agents).map(|i| format!("agent{i}")).collect();
    let tools: Vec<String> = (0..n_tools).map(|i| format!("tool{i}")).collect();
    let mut targets: Vec<String> = agents.iter().chain(&tools).cloned().collect();
    targets.push("ghost".into());

    let runtime = Runtime::in_memory();
    let mut plans = HashMap::new();
    for (i, agent) in agents.iter().enumerate() {
        // delegation only flows to later agents, so runs terminate
        let mut callees: Vec<String> = tools.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
        callees.extend(agents[i + 1..].iter().filter(|_| rng.gen_bool(0.5)).cloned());
        let plan: Vec<String> =
            (0..rng.gen_range(0..=3)).map(|_| targets[rng.gen_range(0..targets.len())].clone()).collect();
        plans.insert(agent.clone(), plan);
        let spec = OxySpec::agent(agent, "llm", &format!("policy:{agent}")).with_callees(callees);
        runtime.registry().register(spec).unwrap();
    }
    for tool in &tools {
        runtime.registry().register(OxySpec::tool(tool, "echo").with_description("echoes")).unwrap();
    }
    runtime.registry().register(OxySpec::llm("llm", "policy")).unwrap();
    runtime.registry().set_entrypoint("agent0");
    let model = Arc::new(PolicyModel { plans, attempts: Mutex::new(Vec::new()) });
    runtime.models().insert("policy", model.clone());
    FuzzCase { runtime, model }
}

fn permitted_map(rt: &Runtime) -> HashMap<String, (HashSet<String>, Option<String>)> {
    rt.registry()
        .snapshot()
        .into_iter()
        .map(|s| {
            let model = s.model_node();
            (s.name.clone(), (s.permitted_callees.into_iter().collect(), model))
        })
        .collect()
}

fn c2_permission_fuzz() -> Result<String, String> {
    let started = Instant::now();
    let (mut executed_edges, mut denied_attempts) = (0usize, 0usize);
    for seed in 0..500u64 {
        let case = fuzz_case(seed);
        let rt = &case.runtime;
        let run = rt.chat("go", None).map_err(|e| format!("seed {seed}: {e}"))?;
        // replay against the registry snapshot taken after the run
        let permitted = permitted_map(rt);
        let graph = rt.traces().assemble_graph(&run.trace_id, None).unwrap();
        for e in &graph.edges {
            let from = graph.node(&e.from).unwrap();
            let to = graph.node(&e.to).unwrap();
            let (callees, model) = &permitted[&from.node];
            let allowed = callees.contains(&to.node) || model.as_deref() == Some(to.node.as_str());
            ensure!(allowed, "seed {seed}: executed edge {} -> {} is not permitted", from.node, to.node);
            executed_edges += 1;
        }

        let unauthorized: Vec<(String, String)> = case
            .model
            .attempts
            .lock()
            .iter()
            .filter(|(agent, callee)| !permitted[agent].0.contains(callee))
            .cloned()
            .collect();
        let mut observed: Vec<(String, String)> = Vec::new();
        for n in graph.nodes.iter().filter(|n| n.node_kind == NodeKind::Agent) {
            let entries = memory_entries(&execute_after(rt, &run.trace_id, None, &n.call_id));
            for (i, entry) in entries.iter().enumerate() {
                if entry["entry"] != json!("failure_observation") {
                    continue;
                }
                let callee = entry["node"].as_str().unwrap_or_default().to_owned();
                if permitted[&n.node].0.contains(&callee) {
                    continue;
                }
                let prior = &entries[i - 1];
                ensure!(
                    prior["entry"] == json!("action_taken") && prior["decision"]["callee"] == json!(callee),
                    "seed {seed}: failure for {callee} does not follow its action"
                );
                let expected = format!("permission denied: {} -> {callee}", n.node);
                let text = entry["error"].as_str().unwrap_or_default();
                ensure!(
                    text == expected || (callee == "ghost" && text.contains("not found")),
                    "seed {seed}: unexpected failure text {text:?}"
                );
                observed.push((n.node.clone(), callee));
            }
        }
        let mut want = unauthorized.clone();
        want.sort();
        observed.sort();
        ensure!(observed == want, "seed {seed}: attempts {want:?} vs failure observations {observed:?}");
        denied_attempts += unauthorized.len();
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("500 topologies, {executed_edges} executed edges, {denied_attempts} unauthorized attempts each observed once"))
}

const DENY_THEN_ALLOW: &str = r#"{
    "entrypoint": "planner_agent",
    "nodes": [
        {"name": "planner_agent", "kind": "agent", "permitted_callees": ["tool_b"],
         "config": {"model": "llm", "system_prompt": "You are the planner."}},
        {"name": "tool_a", "kind": "tool", "description": "not permitted", "config": {"handler": "echo"}},
        {"name": "tool_b", "kind": "tool", "description": "permitted", "config": {"handler": "echo"}},
        {"name": "llm", "kind": "llm", "config": {"binding": "scripted"}}
    ],
    "model_bindings": [{"name": "scripted", "type": "scripted", "script": {"rules": [
        {"regex": "(?s)Observation from tool_b: ([^\\n]+)", "reply": "tool_b said $1"},
        {"match": "Failure from tool_a", "reply": "{\"tool_name\": \"tool_b\", \"arguments\": {\"x\": 1}}"},
        {"regex": "(?s).*", "reply": "{\"tool_name\": \"tool_a\", \"arguments\": {\"x\": 1}}"}
    ]}}]
}"#;

fn c3_replanning() -> Result<String, String> {
    let rt = config_runtime(DENY_THEN_ALLOW);
    let run = rt.chat("do the thing", None).map_err(|e| e.to_string())?;
    ensure!(run.response.is_ok(), "run failed: {:?}", run.response.error_detail);
    ensure!(run.answer_text() == r#"tool_b said {"x":1}"#, "answer {:?}", run.answer_text());
    let payload = execute_after(&rt, &run.trace_id, None, &run.root_call_id);
    ensure!(payload["rounds"] == json!(2), "rounds {}", payload["rounds"]);
    let failures: Vec<Value> =
        memory_entries(&payload).into_iter().filter(|e| e["entry"] == json!("failure_observation")).collect();
    ensure!(failures.len() == 1, "{} failure observations", failures.len());
    ensure!(
        failures[0]["error"] == json!("permission denied: planner_agent -> tool_a"),
        "failure {}",
        failures[0]
    );
    let graph = rt.traces().assemble_graph(&run.trace_id, None).unwrap();
    ensure!(!graph.nodes.iter().any(|n| n.node == "tool_a"), "tool_a executed");
    Ok("ok after 2 rounds, 1 failure observation".into())
}

fn c4_lifecycle_order() -> Result<String, String> {
    let rt = file_assistant_runtime();
    let seen: Arc<Mutex<Vec<(String, LifecycleStage, Phase)>>> = Arc::default();
    let sink = seen.clone();
    rt.aspects()
        .register_everywhere(
            Selector::All,
            Arc::new(move |jp: &JoinPoint<'_>| {
                sink.lock().push((jp.call_id.to_owned(), jp.stage, jp.phase));
                None
            }),
        )
        .unwrap();
    let run = rt.chat("what time is it", None).map_err(|e| e.to_string())?;
    let graph = rt.traces().assemble_graph(&run.trace_id, None).unwrap();
    let pattern: Vec<(LifecycleStage, Phase)> = [
        LifecycleStage::PreProcess,
        LifecycleStage::PreSaveData,
        LifecycleStage::Execute,
        LifecycleStage::PostProcess,
        LifecycleStage::FormatOutput,
    ]
    .into_iter()
    .flat_map(|s| [(s, Phase::Before), (s, Phase::After)])
    .collect();
    let seen = seen.lock().clone();
    let events = rt.traces().events(&run.trace_id, None).unwrap();
    for n in &graph.nodes {
        let got: Vec<(LifecycleStage, Phase)> =
            seen.iter().filter(|(c, _, _)| *c == n.call_id).map(|(_, s, p)| (*s, *p)).collect();
        ensure!(got == pattern, "{} ({}) saw {got:?}", n.node, n.call_id);
        let mine: Vec<_> = events.iter().filter(|e| e.call_id == n.call_id).collect();
        let last_save = mine.iter().filter(|e| e.stage == LifecycleStage::PreSaveData).map(|e| e.seq).max();
        let first_exec = mine.iter().filter(|e| e.stage == LifecycleStage::Execute).map(|e| e.seq).min();
        match (last_save, first_exec) {
            (Some(s), Some(x)) => ensure!(s < x, "{}: PreSaveData seq {s} >= Execute seq {x}", n.node),
            _ => return Err(format!("{}: missing PreSaveData or Execute events", n.node)),
        }
    }
    Ok(format!("{} calls x 10 joinpoints", graph.nodes.len()))
}

const WORKERS: usize = 32;
const GROUPS: usize = 4;
const WRITES: usize = 100;

/// Writes and re-reads keys at three tiers; returns the number of violations.
fn scope_probe(req: &OxyRequest, _: &Value) -> Result<Value, String> {
    let worker = req.arguments.get("worker").and_then(Value::as_u64).ok_or("worker missing")? as usize;
    let group = req.group_id.clone().ok_or("group missing")?;
    let (mut cross_request, mut cross_group, mut app_inconsistent) = (0u64, 0u64, 0u64);
    let err = |e: oxy_core::error::ScopeError| e.to_string();
    for k in 0..WRITES {
        let mine = json!(format!("{}:{k}", req.request_id));
        req.set_global(ScopeLevel::Request, &format!("k{k}"), mine.clone()).map_err(err)?;
        req.set_global(ScopeLevel::Request, &format!("mine{worker}"), mine.clone()).map_err(err)?;
        req.set_global(ScopeLevel::SessionGroup, &format!("gmark{worker}"), json!(group)).map_err(err)?;
        req.set_global(ScopeLevel::Application, &format!("app{worker}:{k}"), mine.clone()).map_err(err)?;

        if req.get_global(ScopeLevel::Request, &format!("k{k}")).map_err(err)? != Some(mine.clone()) {
            cross_request += 1;
        }
        let other = (worker + 1 + k) % WORKERS;
        if other != worker && req.get_global(ScopeLevel::Request, &format!("mine{other}")).map_err(err)?.is_some() {
            cross_request += 1;
        }
        match req.get_global(ScopeLevel::SessionGroup, &format!("gmark{other}")).map_err(err)? {
            Some(v) if v != json!(group) => cross_group += 1,
            Some(_) if other % GROUPS != worker % GROUPS => cross_group += 1,
            _ => {}
        }
        if req.get_global(ScopeLevel::Application, &format!("app{worker}:{k}")).map_err(err)? != Some(mine) {
            app_inconsistent += 1;
        }
        if req.get_global(ScopeLevel::Application, "shared").map_err(err)? != Some(json!("seed")) {
            app_inconsistent += 1;
        }
    }
    Ok(json!({ "cross_request": cross_request, "cross_group": cross_group, "app": app_inconsistent }))
}

fn c5_scope_isolation() -> Result<String, String> {
    let mut totals = [0u64; 3];
    for round in 0..50 {
        let rt = Runtime::in_memory();
        rt.tools().register("scope_probe", scope_probe);
        rt.registry().register(OxySpec::tool("scope_probe", "scope_probe")).unwrap();
        rt.scopes().set("setup", None, ScopeLevel::Application, "shared", json!("seed")).unwrap();
        let outputs: Vec<Value> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..WORKERS)
                .map(|w| {
                    let rt = &rt;
                    s.spawn(move || {
                        let mut args = serde_json::Map::new();
                        args.insert("worker".into(), json!(w));
                        let group = format!("group{}", w % GROUPS);
                        rt.run("scope_probe", args, Some(&group)).unwrap().response
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    let resp = h.join().unwrap();
                    if resp.is_ok() {
                        resp.output
                    } else {
                        json!({ "error": resp.error_detail })
                    }
                })
                .collect()
        });
        for out in outputs {
            ensure!(out.get("error").is_none(), "round {round}: probe failed: {out}");
            totals[0] += out["cross_request"].as_u64().unwrap();
            totals[1] += out["cross_group"].as_u64().unwrap();
            totals[2] += out["app"].as_u64().unwrap();
        }
        ensure!(totals == [0, 0, 0], "round {round}: violations {totals:?}");
    }
    Ok(format!("50 x {WORKERS} requests x {WRITES} writes, 0 violations"))
}

/// Copies a sealed trace under a new id with shifted timestamps and fresh call ids.
fn perturbed_copy(traces: &TraceStore, trace_id: &str) -> String {
    let copy_id = format!("{trace_id}-copy");
    let version = traces.begin_trace(&copy_id).unwrap();
    let mut ids: HashMap<String, String> = HashMap::new();
    let mut fresh = |id: &str| ids.entry(id.to_owned()).or_insert_with(|| format!("c{}", md5_hex(id.as_bytes()))).clone();
    for e in traces.events(trace_id, None).unwrap() {
        let draft = EventDraft {
            call_id: fresh(&e.call_id),
            parent_call_id: e.parent_call_id.as_deref().map(&mut fresh),
            node: e.node,
            node_kind: e.node_kind,
            stage: e.stage,
            phase: e.phase,
            timestamp: e.timestamp + 7_777,
            payload: e.payload,
        };
        traces.record_event(&copy_id, &version, draft).unwrap();
    }
    traces.seal(&copy_id, &version).unwrap();
    copy_id
}

fn c6_dedup() -> Result<String, String> {
    let vectors = [
        ("", "d41d8cd98f00b204e9800998ecf8427e"),
        ("a", "0cc175b9c0f1b6a831c399e269772661"),
        ("abc", "900150983cd24fb0d6963f7d28e17f72"),
        ("message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
        ("abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"),
        ("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789", "d174ab98d277d9f5a5611c2c9f419d9f"),
        (
            "12345678901234567890123456789012345678901234567890123456789012345678901234567890",
            "57edf4a22be3c955ac49da2e2107b67a",
        ),
    ];
    for (input, want) in vectors {
        ensure!(md5_hex(input.as_bytes()) == want, "md5({input:?})");
    }

    let rt = file_assistant_runtime();
    let run = rt.chat("what time is it", None).map_err(|e| e.to_string())?;
    let bank = Bank::in_memory();
    let mut record = None;
    for _ in 0..3 {
        record = Some(bank.deposit(rt.traces(), &run.trace_id, None).map_err(|e| e.to_string())?);
    }
    let record = record.unwrap();
    ensure!(bank.list(None).len() == 1, "{} records", bank.list(None).len());
    ensure!(record.occurrence_count == 3, "occurrence_count {}", record.occurrence_count);

    let copy = perturbed_copy(rt.traces(), &run.trace_id);
    let again = bank.deposit(rt.traces(), &copy, None).map_err(|e| e.to_string())?;
    ensure!(again.record_id == record.record_id, "perturbed copy created a new record");
    ensure!(bank.list(None).len() == 1, "{} records after copy", bank.list(None).len());

    let other = rt.chat("please read notes/todo.txt", None).map_err(|e| e.to_string())?;
    bank.deposit(rt.traces(), &other.trace_id, None).map_err(|e| e.to_string())?;
    ensure!(bank.list(None).len() == 2, "a different trace was merged");
    Ok(format!("7/7 md5 vectors, occurrence_count {} after perturbed copy", again.occurrence_count))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum St {
    Pending,
    Annotated,
    Approved,
    Rejected,
}

/// The review table, written out independently of the bank code.
fn table(state: St, action: &str) -> Option<St> {
    match (state, action) {
        (St::Pending, "annotate") => Some(St::Annotated),
        (St::Annotated, "approve") => Some(St::Approved),
        (St::Pending, "reject") | (St::Annotated, "reject") => Some(St::Rejected),
        (St::Rejected, "reopen") => Some(St::Pending),
        _ => None,
    }
}

fn to_st(s: oxy_core::bank::ReviewState) -> St {
    match s {
        oxy_core::bank::ReviewState::Pending => St::Pending,
        oxy_core::bank::ReviewState::Annotated => St::Annotated,
        oxy_core::bank::ReviewState::Approved => St::Approved,
        oxy_core::bank::ReviewState::Rejected => St::Rejected,
    }
}

fn projection(k: u8) -> TraceProjection {
    TraceProjection {
        root_caller: USER_CALLER.into(),
        calls: vec![ProjectedCall {
            node: "agent".into(),
            kind: NodeKind::Agent,
            input: json!({ "query": format!("q{k}") }),
            output: json!(format!("a{k}")),
            status: CallStatus::Ok,
        }],
    }
}

/// Drives `bank` into `state` for a fresh record and returns its id.
fn record_in(bank: &Bank, k: u8, state: St) -> String {
    let id = bank.deposit_projection("t", "v", projection(k)).unwrap().record_id;
    let qa = json!({ "question": "q", "answer": "a" });
    match state {
        St::Pending => {}
        St::Annotated => {
            bank.annotate(&id, "qa", qa).unwrap();
        }
        St::Approved => {
            bank.annotate(&id, "qa", qa).unwrap();
            bank.audit(&id, Verdict::Approve, None).unwrap();
        }
        St::Rejected => {
            bank.audit(&id, Verdict::Reject, None).unwrap();
        }
    }
    id
}

fn apply(bank: &Bank, id: &str, action: &str, valid: bool) -> Result<St, BankError> {
    let payload = if valid { json!({ "question": "q", "answer": "a" }) } else { json!({ "question": "q" }) };
    let r = match action {
        "annotate" => bank.annotate(id, "qa", payload),
        "approve" => bank.audit(id, Verdict::Approve, None),
        "reject" => bank.audit(id, Verdict::Reject, None),
        _ => bank.reopen(id),
    }?;
    Ok(to_st(r.state))
}

#[derive(Debug, Clone)]
enum Op {
    Deposit(u8),
    Act { pick: usize, action: &'static str, valid: bool },
    Export,
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => (0u8..24).prop_map(Op::Deposit),
        6 => (any::<usize>(), prop::sample::select(vec!["annotate", "approve", "reject", "reopen"]), prop::bool::weighted(0.85))
            .prop_map(|(pick, action, valid)| Op::Act { pick, action, valid }),
        1 => Just(Op::Export),
    ]
}

fn c7_gating() -> Result<String, String> {
    let states = [St::Pending, St::Annotated, St::Approved, St::Rejected];
    let actions = ["annotate", "approve", "reject", "reopen"];
    let mut k = 0u8;
    for from in states {
        for action in actions {
            let bank = Bank::in_memory();
            let id = record_in(&bank, k, from);
            k += 1;
            let got = apply(&bank, &id, action, true);
            match (table(from, action), got) {
                (Some(to), Ok(st)) => ensure!(st == to, "{from:?} x {action}: got {st:?}, want {to:?}"),
                (None, Err(BankError::InvalidTransition { .. })) => {
                    let now = to_st(bank.get(&id).unwrap().state);
                    ensure!(now == from, "{from:?} x {action}: rejected but state moved to {now:?}");
                }
                (want, got) => return Err(format!("{from:?} x {action}: want {want:?}, got {got:?}")),
            }
        }
    }

    let mut runner = TestRunner::new(ProptestConfig { cases: 6, failure_persistence: None, ..ProptestConfig::default() });
    let exports = std::cell::Cell::new(0usize);
    let result = runner.run(&prop::collection::vec(op_strategy(), 10_000), |ops| {
        let bank = Bank::in_memory();
        let mut model: BTreeMap<String, St> = BTreeMap::new();
        for op in ops {
            match op {
                Op::Deposit(k) => {
                    let r = bank.deposit_projection("t", "v", projection(k)).unwrap();
                    model.entry(r.record_id).or_insert(St::Pending);
                }
                Op::Act { pick, action, valid } => {
                    if model.is_empty() {
                        continue;
                    }
                    let id = model.keys().nth(pick % model.len()).unwrap().clone();
                    let from = model[&id];
                    let expected = table(from, action);
                    let got = apply(&bank, &id, action, valid);
                    match (expected, got) {
                        (Some(to), Ok(st)) => {
                            prop_assert_eq!(st, to);
                            model.insert(id, to);
                        }
                        (Some(_), Err(BankError::TemplateViolation(_))) => prop_assert!(action == "annotate" && !valid),
                        (None, Err(BankError::InvalidTransition { .. })) => {}
                        (want, got) => prop_assert!(false, "{:?} x {}: want {:?}, got {:?}", from, action, want, got),
                    }
                }
                Op::Export => {
                    let samples = bank.export_knowledge(&ExportFilter::default());
                    for s in &samples {
                        prop_assert_eq!(model.get(&s.record_id).copied(), Some(St::Approved));
                        prop_assert_eq!(to_st(bank.get(&s.record_id).unwrap().state), St::Approved);
                    }
                    let approved = model.values().filter(|s| **s == St::Approved).count();
                    prop_assert_eq!(samples.len(), approved);
                    exports.set(exports.get() + 1);
                }
            }
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok(format!("16-cell matrix exact; 6 x 10000-step sequences, {} exports checked", exports.get()))
}

fn downstream(rt: &Runtime, trace: &str, version: Option<&str>, from_seq: u64) -> Vec<String> {
    rt.traces()
        .events(trace, version)
        .unwrap()
        .into_iter()
        .filter(|e| e.seq >= from_seq)
        .map(|e| format!("{}|{}|{:?}|{}", e.node, e.stage, e.phase, serde_json::to_string(&e.payload).unwrap()))
        .collect()
}

fn c8_replay() -> Result<String, String> {
    let graphs: Vec<ExecutionGraph> = (0..2)
        .map(|_| {
            let rt = file_assistant_runtime();
            let run = rt.chat("what time is it", None).unwrap();
            rt.traces().assemble_graph(&run.trace_id, None).unwrap()
        })
        .collect();
    ensure!(graphs[0].normalized() == graphs[1].normalized(), "repeated runs differ structurally");

    let rt = file_assistant_runtime();
    let run = rt.chat("what time is it", None).map_err(|e| e.to_string())?;
    let graph = rt.traces().assemble_graph(&run.trace_id, None).unwrap();
    let root_version = run.version_id.clone();
    let checksum = rt.traces().version_checksum(&run.trace_id, &root_version).unwrap();
    let tool = graph.nodes.iter().find(|n| n.node == "time_tool").unwrap().call_id.clone();
    let branch_seq = rt
        .traces()
        .events(&run.trace_id, None)
        .unwrap()
        .iter()
        .find(|e| e.call_id == tool)
        .map(|e| e.seq)
        .unwrap();

    let regen = rt.regenerate(&run.trace_id, None, &tool, Overrides::default()).map_err(|e| e.to_string())?;
    ensure!(regen.answer_text() == "12:00", "regenerated answer {}", regen.answer_text());
    let parent_tail = downstream(&rt, &run.trace_id, Some(&root_version), branch_seq);
    let branch_tail = downstream(&rt, &run.trace_id, Some(&regen.version_id), branch_seq);
    ensure!(parent_tail == branch_tail, "downstream snapshots differ");
    let branched = rt.traces().assemble_graph(&run.trace_id, Some(&regen.version_id)).unwrap();
    ensure!(branched.normalized() == graph.normalized(), "empty-override branch differs structurally");

    for i in 0..10 {
        let overrides = if i % 2 == 0 {
            Overrides::default()
        } else {
            Overrides { arguments: Some(json!({ "time": format!("0{i}:00") }).as_object().unwrap().clone()), ..Overrides::default() }
        };
        let target = if i % 3 == 0 { run.root_call_id.clone() } else { tool.clone() };
        rt.regenerate(&run.trace_id, None, &target, overrides).map_err(|e| e.to_string())?;
    }
    let after = rt.traces().version_checksum(&run.trace_id, &root_version).unwrap();
    ensure!(after == checksum, "parent checksum changed");
    let versions = rt.traces().versions(&run.trace_id).unwrap().len();
    ensure!(versions == 12, "{versions} versions");
    Ok(format!("{} downstream events byte-equal; checksum stable over 11 branches", parent_tail.len()))
}

const TIMED: &str = r#"{
    "entrypoint": "timed_agent",
    "nodes": [
        {"name": "timed_agent", "kind": "agent", "permitted_callees": ["nap"],
         "config": {"model": "llm", "system_prompt": "You are timed."}},
        {"name": "nap", "kind": "tool", "config": {"handler": "sleep", "params": {"ms": 20}}},
        {"name": "llm", "kind": "llm", "config": {"binding": "slow"}}
    ],
    "model_bindings": [{"name": "slow", "type": "scripted", "script": {"delay_ms": 50, "rules": [
        {"match": "Observation from nap", "reply": "rested"},
        {"regex": "(?s).*", "reply": "{\"tool_name\": \"nap\", \"arguments\": {}}"}
    ]}}]
}"#;

fn c9_timing() -> Result<String, String> {
    let tol = 10u64;
    let rt = config_runtime(TIMED);
    let run = rt.chat("take a nap", None).map_err(|e| e.to_string())?;
    ensure!(run.answer_text() == "rested", "answer {}", run.answer_text());
    let report = rt.traces().timing_report(&run.trace_id, None).unwrap();
    let near = |got: u64, want: u64| got.abs_diff(want) <= tol;
    for c in &report.calls {
        match c.node_kind {
            NodeKind::Llm => ensure!(near(c.inclusive_ms, 50), "llm call took {}ms", c.inclusive_ms),
            NodeKind::Tool => ensure!(near(c.inclusive_ms, 20), "tool call took {}ms", c.inclusive_ms),
            _ => {}
        }
    }
    let root = report.calls.iter().find(|c| Some(&c.call_id) == report.root_call_id.as_ref()).unwrap();
    ensure!(near(root.llm_ms, 100), "root llm_ms {}", root.llm_ms);
    ensure!(near(root.tool_ms, 20), "root tool_ms {}", root.tool_ms);
    ensure!(root.agent_ms == 0, "root agent_ms {}", root.agent_ms);
    let categorized = root.llm_ms + root.tool_ms + root.agent_ms;
    ensure!(categorized <= report.wall_ms + tol, "categorized {categorized}ms > wall {}ms", report.wall_ms);
    ensure!(root.self_ms + categorized == root.inclusive_ms, "self + categories != inclusive");
    Ok(format!("llm {}ms, tool {}ms, wall {}ms", root.llm_ms, root.tool_ms, report.wall_ms))
}

fn question(i: usize) -> String {
    format!("what is the code for item {i:02}?")
}

fn code(i: usize) -> String {
    format!("code-{i:02}")
}

/// Tasks 0..12 are answered by the model itself; 12..20 need knowledge.
const KNOWN: usize = 12;
const TASKS: usize = 20;

fn ablation_config() -> String {
    let mut qa_rules = vec![
        json!({ "regex": "(?s)Observation from knowledge_lookup: ([^\\n]+)", "reply": "$1" }),
        json!({ "match": "Failure from knowledge_lookup", "reply": "I do not know." }),
    ];
    for i in 0..KNOWN {
        qa_rules.push(json!({ "match": format!("Query: {}", question(i)), "reply": code(i) }));
    }
    qa_rules.push(json!({
        "regex": "(?s)Query: ([^\\n]+)",
        "reply": "{\"tool_name\": \"knowledge_lookup\", \"arguments\": {\"query\": \"$1\"}}"
    }));
    let research_rules = vec![
        json!({ "regex": "(?s)Observation from archive: \\{\"answer\":\"([^\"]+)\"\\}", "reply": "$1" }),
        json!({ "regex": "(?s)Query: ([^\\n]+)", "reply": "{\"tool_name\": \"archive\", \"arguments\": {\"query\": \"$1\"}}" }),
    ];
    json!({
        "nodes": [
            { "name": "qa_agent", "kind": "agent", "permitted_callees": ["knowledge_lookup"],
              "config": { "model": "qa_llm", "system_prompt": "Answer item-code questions." } },
            { "name": "knowledge_lookup", "kind": "tool", "description": "Looks up reviewed answers.",
              "config": { "handler": "knowledge_lookup" } },
            { "name": "research_agent", "kind": "agent", "permitted_callees": ["archive"],
              "config": { "model": "research_llm", "system_prompt": "Research item codes." } },
            { "name": "archive", "kind": "tool", "config": { "handler": "archive" } },
            { "name": "qa_llm", "kind": "llm", "config": { "binding": "qa" } },
            { "name": "research_llm", "kind": "llm", "config": { "binding": "research" } }
        ],
        "model_bindings": [
            { "name": "qa", "type": "scripted", "script": { "rules": qa_rules } },
            { "name": "research", "type": "scripted", "script": { "rules": research_rules } }
        ]
    })
    .to_string()
}

fn ablation_runtime() -> Runtime {
    let rt = config_runtime(&ablation_config());
    rt.tools().register("archive", |req: &OxyRequest, _: &Value| {
        let q = req.arguments.get("query").and_then(Value::as_str).unwrap_or_default();
        (KNOWN..TASKS)
            .find(|i| question(*i) == q)
            .map(|i| json!({ "answer": code(i) }))
            .ok_or_else(|| "not archived".to_owned())
    });
    rt
}

fn benchmark(rt: &Runtime) -> usize {
    (0..TASKS)
        .filter(|i| {
            let mut args = serde_json::Map::new();
            args.insert("query".into(), json!(question(*i)));
            rt.run("qa_agent", args, None).map(|r| r.answer_text() == code(*i)).unwrap_or(false)
        })
        .count()
}

fn c10_ablation() -> Result<String, String> {
    // earlier research sessions, reviewed in the bank
    let source = ablation_runtime();
    let bank = Bank::in_memory();
    for i in KNOWN..TASKS {
        let mut args = serde_json::Map::new();
        args.insert("query".into(), json!(question(i)));
        let run = source.run("research_agent", args, None).map_err(|e| e.to_string())?;
        ensure!(run.answer_text() == code(i), "research answer {}", run.answer_text());
        let record = bank.deposit(source.traces(), &run.trace_id, None).map_err(|e| e.to_string())?;
        let projection = &record.projection.calls[0];
        let fields = json!({
            "question": projection.input["query"],
            "answer": projection.output,
        });
        bank.annotate(&record.record_id, "qa", fields).map_err(|e| e.to_string())?;
        bank.audit(&record.record_id, Verdict::Approve, None).map_err(|e| e.to_string())?;
    }
    // an unreviewed wrong answer must not leak into the export
    let bogus = bank
        .deposit_projection("t", "v", TraceProjection { root_caller: USER_CALLER.into(), calls: vec![] })
        .map_err(|e| e.to_string())?;
    bank.annotate(&bogus.record_id, "qa", json!({ "question": question(0), "answer": "wrong" }))
        .map_err(|e| e.to_string())?;
    let samples = bank.export_knowledge(&ExportFilter { priority: Some(Priority::P0), ..ExportFilter::default() });
    ensure!(samples.len() == TASKS - KNOWN, "{} samples exported", samples.len());

    let without = benchmark(&ablation_runtime());
    let enabled = ablation_runtime();
    let loaded = load_knowledge(&samples, enabled.tools().knowledge());
    let with = benchmark(&enabled);
    ensure!(loaded == TASKS - KNOWN, "{loaded} samples loaded");
    ensure!(with > without, "with bank {with} <= without {without}");
    ensure!((with, without) == (20, 12), "expected 20 vs 12, got {with} vs {without}");
    Ok(format!("{with}/20 with bank-backed lookup vs {without}/20 without"))
}

fn strip(mut v: Value, field: &str) -> Value {
    if let Some(obj) = v.get_mut("data").and_then(Value::as_object_mut) {
        obj.remove(field);
    }
    v
}

fn c11_parity() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path();
    let cfg = file_assistant();
    let cfg_s = cfg.to_str().unwrap();
    let http = Http::new();
    let mut compared = 0usize;
    let mut same = |label: &str, cli: &Value, api: &Value| -> Result<(), String> {
        compared += 1;
        if cli == api {
            Ok(())
        } else {
            Err(format!("{label}: cli {cli} != api {api}"))
        }
    };

    let (code, chat) = cli_json(store, &["chat", "--config", cfg_s, "--query", "what time is it"]);
    ensure!(code == 0 && chat["data"]["answer"] == json!("12:00"), "chat {chat}");
    let trace = chat["data"]["trace_id"].as_str().unwrap().to_owned();

    let (_, a) = cli_json(store, &["trace", "list"]);
    same("trace list", &a, &http.json(store, None, "GET", "/traces", None).1)?;
    let (_, a) = cli_json(store, &["trace", "show", &trace]);
    same("trace show", &a, &http.json(store, None, "GET", &format!("/traces/{trace}/graph"), None).1)?;
    let (_, a) = cli_json(store, &["trace", "show", &trace, "--paths"]);
    same("trace show --paths", &a, &http.json(store, None, "GET", &format!("/traces/{trace}/graph?view=path"), None).1)?;
    let (_, a) = cli_json(store, &["trace", "show", &trace, "--timing"]);
    same("trace show --timing", &a, &http.json(store, None, "GET", &format!("/traces/{trace}/timing"), None).1)?;
    let (_, a) = cli_json(store, &["trace", "show", &trace, "--versions"]);
    same("trace show --versions", &a, &http.json(store, None, "GET", &format!("/traces/{trace}/versions"), None).1)?;

    let (_, a) = cli_json(store, &["trace", "show", &trace, "--events"]);
    let (_, sse) = http.raw(store, None, "GET", &format!("/traces/{trace}/events?from_seq=0"), None);
    let frames = parse_sse(&String::from_utf8(sse).unwrap());
    let streamed: Vec<Value> =
        frames.iter().filter(|f| f.0 == "trace").map(|f| serde_json::from_str(&f.2).unwrap()).collect();
    ensure!(frames.last().map(|f| f.0.as_str()) == Some("sealed"), "stream did not end sealed");
    same("trace show --events", &a["data"], &Value::Array(streamed))?;

    let (_, dot_cli, _) = support::cli(&["--store", store.to_str().unwrap(), "trace", "show", &trace, "--dot"]);
    let (_, dot_api) = http.raw(store, None, "GET", &format!("/traces/{trace}/dot"), None);
    same("trace show --dot", &json!(dot_cli), &json!(String::from_utf8(dot_api).unwrap()))?;

    let (code, a) = cli_json(store, &["trace", "show", "missing"]);
    ensure!(code == 1, "unknown trace exit {code}");
    same("trace show (unknown)", &a, &http.json(store, None, "GET", "/traces/missing/graph", None).1)?;

    let graph: ExecutionGraph = serde_json::from_value(
        http.json(store, None, "GET", &format!("/traces/{trace}/graph"), None).1["data"].clone(),
    )
    .unwrap();
    let tool = graph.nodes.iter().find(|n| n.node == "time_tool").unwrap().call_id.clone();
    let (code, a) = cli_json(store, &["trace", "regenerate", &trace, &tool, "--config", cfg_s, "--set", "time=08:45"]);
    ensure!(code == 0, "regenerate exit {code}: {a}");
    let body = json!({ "overrides": { "arguments": { "time": "08:45" } } });
    let (_, b) = http.json(store, Some(&cfg), "POST", &format!("/traces/{trace}/nodes/{tool}/regenerate"), Some(body));
    ensure!(a["data"]["answer"] == json!("08:45"), "regenerated answer {a}");
    same("trace regenerate", &strip(a.clone(), "new_version_id"), &strip(b.clone(), "new_version_id"))?;
    let new_a = a["data"]["new_version_id"].as_str().unwrap();
    let new_b = b["data"]["new_version_id"].as_str().unwrap();
    let (_, ga) = cli_json(store, &["trace", "show", &trace, "--version", new_a]);
    let (_, gb) = http.json(store, None, "GET", &format!("/traces/{trace}/graph?version={new_b}"), None);
    let na = serde_json::from_value::<ExecutionGraph>(ga["data"].clone()).unwrap().normalized();
    let nb = serde_json::from_value::<ExecutionGraph>(gb["data"].clone()).unwrap().normalized();
    same("regenerated graphs", &serde_json::to_value(na).unwrap(), &serde_json::to_value(nb).unwrap())?;

    let (code, dep) = cli_json(store, &["bank", "deposit", &trace]);
    ensure!(code == 0, "deposit exit {code}: {dep}");
    let id = dep["data"]["record_id"].as_str().unwrap().to_owned();
    same("bank deposit", &dep, &http.json(store, None, "GET", &format!("/bank/records/{id}"), None).1)?;
    let (_, dup) = http.json(store, None, "POST", "/bank/records", Some(json!({ "trace_id": trace })));
    ensure!(dup["data"]["occurrence_count"] == json!(2), "duplicate deposit {dup}");
    same("bank show", &cli_json(store, &["bank", "show", &id]).1, &dup)?;

    let (code, a) = cli_json(store, &["bank", "audit", &id, "--approve"]);
    ensure!(code == 1, "audit of pending record exit {code}");
    let (status, b) = http.json(store, None, "POST", &format!("/bank/records/{id}/audit"), Some(json!({ "verdict": "approve" })));
    ensure!(status == 409, "audit of pending record status {status}");
    same("bank audit (pending)", &a, &b)?;

    let (code, a) = cli_json(
        store,
        &["bank", "annotate", &id, "--template", "qa", "--field", "question=what time is it", "--field", "answer=12:00"],
    );
    ensure!(code == 0, "annotate exit {code}: {a}");
    same("bank annotate", &a, &http.json(store, None, "GET", &format!("/bank/records/{id}"), None).1)?;
    let (code, a) = cli_json(store, &["bank", "annotate", &id, "--template", "qa", "--field", "question=x"]);
    ensure!(code == 1, "second annotate exit {code}");
    let bad = json!({ "template_id": "qa", "fields": { "question": "x" } });
    same("bank annotate (annotated)", &a, &http.json(store, None, "POST", &format!("/bank/records/{id}/annotate"), Some(bad)).1)?;

    let (_, b) = http.json(store, None, "POST", &format!("/bank/records/{id}/audit"), Some(json!({ "verdict": "approve", "note": "ok" })));
    same("bank audit", &cli_json(store, &["bank", "show", &id]).1, &b)?;

    let (_, chat2) = cli_json(store, &["chat", "--config", cfg_s, "--query", "please read notes/todo.txt"]);
    let trace2 = chat2["data"]["trace_id"].as_str().unwrap().to_owned();
    let (_, dep2) = http.json(store, None, "POST", "/bank/records", Some(json!({ "trace_id": trace2 })));
    let id2 = dep2["data"]["record_id"].as_str().unwrap().to_owned();
    let (code, a) = cli_json(store, &["bank", "audit", &id2, "--reject", "--note", "duplicate topic"]);
    ensure!(code == 0, "reject exit {code}");
    same("bank audit --reject", &a, &http.json(store, None, "GET", &format!("/bank/records/{id2}"), None).1)?;
    let (_, b) = http.json(store, None, "POST", &format!("/bank/records/{id2}/reopen"), None);
    same("bank reopen", &cli_json(store, &["bank", "show", &id2]).1, &b)?;
    let (_, a) = cli_json(store, &["bank", "audit", &id2, "--reject"]);
    let (_, b) = http.json(store, None, "GET", &format!("/bank/records/{id2}"), None);
    same("bank audit --reject (again)", &a, &b)?;
    let (_, a) = cli_json(store, &["bank", "reopen", &id2]);
    same("bank reopen (cli)", &a, &http.json(store, None, "GET", &format!("/bank/records/{id2}"), None).1)?;

    for state in [None, Some("pending"), Some("approved"), Some("rejected")] {
        let mut args = vec!["bank", "list"];
        let uri = match state {
            Some(s) => {
                args.extend(["--state", s]);
                format!("/bank/records?state={s}")
            }
            None => "/bank/records".to_owned(),
        };
        same(&format!("bank list {state:?}"), &cli_json(store, &args).1, &http.json(store, None, "GET", &uri, None).1)?;
    }

    let (_, a) = cli_json(store, &["bank", "export"]);
    let (_, b) = http.json(store, None, "GET", "/bank/export", None);
    ensure!(a["data"].as_array().map(Vec::len) == Some(1), "export {a}");
    same("bank export", &a, &b)?;
    let (_, a) = cli_json(store, &["bank", "export", "--priority", "P1"]);
    same("bank export --priority", &a, &http.json(store, None, "GET", "/bank/export?priority=P1", None).1)?;
    let out = store.join("samples.jsonl");
    let (_, a) = cli_json(store, &["bank", "export", "--template", "qa", "-o", out.to_str().unwrap()]);
    let written: Vec<Value> =
        std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    same("bank export -o", &a["data"], &Value::Array(written))?;
    same("bank export --template", &a, &http.json(store, None, "GET", "/bank/export?template=qa", None).1)?;

    Ok(format!("{compared} cli/endpoint pairs equal"))
}
