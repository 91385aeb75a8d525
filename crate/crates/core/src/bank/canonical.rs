//! Semantic projection of a trace and its canonical digest.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::md5::md5_hex;
use crate::error::TraceError;
use crate::lifecycle::LifecycleStage;
use crate::node::{NodeKind, USER_CALLER};
use crate::tracer::{CallStatus, ExecutionGraph, TraceEvent, TraceStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Priority {
    P0,
    P1,
    P2,
}

impl Priority {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "P0" => Some(Priority::P0),
            "P1" => Some(Priority::P1),
            "P2" => Some(Priority::P2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedCall {
    pub node: String,
    pub kind: NodeKind,
    pub input: Value,
    pub output: Value,
    pub status: CallStatus,
}

/// What a trace means, stripped of ids, seq numbers and timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceProjection {
    /// `__user__` for end-to-end runs, otherwise the node that issued the
    /// projected root call.
    pub root_caller: String,
    /// Calls ordered by first appearance.
    pub calls: Vec<ProjectedCall>,
}

impl TraceProjection {
    pub fn involves(&self, node: &str) -> bool {
        self.calls.iter().any(|c| c.node == node)
    }
}

/// Writes JSON with object keys sorted at every level and no whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

pub fn canonical_digest(projection: &TraceProjection) -> String {
    let value = serde_json::to_value(projection).unwrap_or(Value::Null);
    md5_hex(canonical_json(&value).as_bytes())
}

/// P2 when no agent or flow took part, P0 for end-to-end user runs, P1 for
/// sub-runs started by an agent.
pub fn infer_priority(projection: &TraceProjection) -> Priority {
    if projection.calls.iter().all(|c| c.kind.is_leaf()) {
        Priority::P2
    } else if projection.root_caller == USER_CALLER {
        Priority::P0
    } else {
        Priority::P1
    }
}

fn project_subtree(graph: &ExecutionGraph, root_call: &str, root_caller: String) -> TraceProjection {
    let mut keep = vec![root_call.to_owned()];
    let mut calls = Vec::new();
    for n in &graph.nodes {
        let inside = n.call_id == root_call || n.parent_call_id.as_ref().is_some_and(|p| keep.contains(p));
        if inside {
            if n.call_id != root_call {
                keep.push(n.call_id.clone());
            }
            calls.push(ProjectedCall {
                node: n.node.clone(),
                kind: n.node_kind,
                input: n.input.clone(),
                output: n.output.clone(),
                status: n.status,
            });
        }
    }
    TraceProjection { root_caller, calls }
}

fn root_caller(events: &[TraceEvent], call_id: &str) -> String {
    events
        .iter()
        .find(|e| e.call_id == call_id && e.stage == LifecycleStage::PreSaveData)
        .and_then(|e| e.payload.get("caller").and_then(Value::as_str))
        .unwrap_or(USER_CALLER)
        .to_owned()
}

/// Projects one sealed version. For a regenerated version only the re-executed
/// subtree is projected, attributed to the node that called it.
pub fn project_version(traces: &TraceStore, trace_id: &str, version_id: Option<&str>) -> Result<TraceProjection, TraceError> {
    let version = match version_id {
        Some(v) => v.to_owned(),
        None => traces.root_version(trace_id)?,
    };
    let meta = traces.version_meta(trace_id, &version)?;
    let events = traces.events(trace_id, Some(&version))?;
    let graph = crate::tracer::assemble(trace_id, &version, meta.parent_version.as_deref(), &events);
    let own_start = meta.inherited.last().map(|r| r.to_seq).unwrap_or(0);
    let regenerated_root = if meta.parent_version.is_some() {
        events.iter().find(|e| e.seq == own_start).and_then(|first| graph.node(&first.call_id))
    } else {
        None
    };
    if let Some(target) = regenerated_root.filter(|t| t.parent_call_id.is_some()) {
        let caller = target
            .parent_call_id
            .as_deref()
            .and_then(|p| graph.node(p))
            .map(|p| p.node.clone())
            .unwrap_or_else(|| USER_CALLER.to_owned());
        return Ok(project_subtree(&graph, &target.call_id, caller));
    }
    let Some(root) = graph.root() else {
        return Ok(TraceProjection { root_caller: USER_CALLER.to_owned(), calls: Vec::new() });
    };
    Ok(project_subtree(&graph, &root.call_id, root_caller(&events, &root.call_id)))
}
