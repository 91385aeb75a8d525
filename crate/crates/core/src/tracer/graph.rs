use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EventDraft, TraceEvent};
use crate::lifecycle::{LifecycleStage, Phase};
use crate::node::NodeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Ok,
    Error,
    /// No FormatOutput event recorded yet.
    Running,
}

impl CallStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CallStatus::Ok => "ok",
            CallStatus::Error => "error",
            CallStatus::Running => "running",
        }
    }
}

/// One invocation in the execution graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub call_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_call_id: Option<String>,
    pub node: String,
    pub node_kind: NodeKind,
    pub status: CallStatus,
    pub start_ms: u64,
    pub end_ms: u64,
    pub duration_ms: u64,
    pub input: Value,
    pub output: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
}

/// Call tree of one trace version. Nodes are ordered by their first event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionGraph {
    pub trace_id: String,
    pub version_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<String>,
    pub nodes: Vec<TraceNode>,
    pub edges: Vec<GraphEdge>,
}

/// Builds the call tree from an event sequence.
pub fn assemble(trace_id: &str, version_id: &str, parent_version: Option<&str>, events: &[TraceEvent]) -> ExecutionGraph {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut nodes: Vec<TraceNode> = Vec::new();
    for e in events {
        let i = *index.entry(e.call_id.as_str()).or_insert_with(|| {
            nodes.push(TraceNode {
                call_id: e.call_id.clone(),
                parent_call_id: e.parent_call_id.clone(),
                node: e.node.clone(),
                node_kind: e.node_kind,
                status: CallStatus::Running,
                start_ms: e.timestamp,
                end_ms: e.timestamp,
                duration_ms: 0,
                input: Value::Null,
                output: Value::Null,
                error: None,
            });
            nodes.len() - 1
        });
        let n = &mut nodes[i];
        if n.status == CallStatus::Running {
            n.end_ms = n.end_ms.max(e.timestamp);
        }
        match (e.stage, e.phase) {
            (LifecycleStage::PreSaveData, Phase::After) => {
                n.input = e.payload.get("input").cloned().unwrap_or(Value::Null);
            }
            (LifecycleStage::FormatOutput, Phase::After) => {
                n.output = e.payload.get("output").cloned().unwrap_or(Value::Null);
                n.status = match e.payload.get("status").and_then(Value::as_str) {
                    Some("error") => CallStatus::Error,
                    _ => CallStatus::Ok,
                };
                n.error = e.payload.get("error").and_then(Value::as_str).map(str::to_owned);
                n.end_ms = e.timestamp;
            }
            _ => {}
        }
    }
    for n in &mut nodes {
        n.duration_ms = n.end_ms.saturating_sub(n.start_ms);
    }
    let edges = nodes
        .iter()
        .filter_map(|n| {
            let parent = n.parent_call_id.as_deref()?;
            index.contains_key(parent).then(|| GraphEdge { from: parent.to_owned(), to: n.call_id.clone() })
        })
        .collect();
    ExecutionGraph {
        trace_id: trace_id.to_owned(),
        version_id: version_id.to_owned(),
        parent_version: parent_version.map(str::to_owned),
        nodes,
        edges,
    }
}

/// A call with ids and timestamps stripped; `parent` indexes into the same list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedNode {
    pub parent: Option<usize>,
    pub node: String,
    pub node_kind: NodeKind,
    pub status: CallStatus,
    pub input: Value,
    pub output: Value,
}

/// Graph shape independent of call ids and wall-clock times. Two runs are
/// structurally equal when their normalized graphs compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedGraph {
    pub nodes: Vec<NormalizedNode>,
}

/// Calls merged by their name path from the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathNode {
    pub path: String,
    pub node: String,
    pub node_kind: NodeKind,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEdge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathGraph {
    pub nodes: Vec<PathNode>,
    pub edges: Vec<PathEdge>,
}

impl ExecutionGraph {
    pub fn node(&self, call_id: &str) -> Option<&TraceNode> {
        self.nodes.iter().find(|n| n.call_id == call_id)
    }

    /// Calls without a recorded parent, in order.
    pub fn roots(&self) -> Vec<&TraceNode> {
        self.nodes
            .iter()
            .filter(|n| n.parent_call_id.as_deref().is_none_or(|p| self.node(p).is_none()))
            .collect()
    }

    pub fn root(&self) -> Option<&TraceNode> {
        self.roots().into_iter().next()
    }

    pub fn children(&self, call_id: &str) -> Vec<&TraceNode> {
        self.nodes.iter().filter(|n| n.parent_call_id.as_deref() == Some(call_id)).collect()
    }

    fn preorder(&self) -> Vec<(usize, Option<usize>)> {
        let pos: HashMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.call_id.as_str(), i)).collect();
        let mut kids: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut roots = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            match n.parent_call_id.as_deref().and_then(|p| pos.get(p)) {
                Some(&p) => kids.entry(p).or_default().push(i),
                None => roots.push(i),
            }
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<(usize, Option<usize>)> = roots.into_iter().rev().map(|r| (r, None)).collect();
        while let Some((i, parent)) = stack.pop() {
            let me = out.len();
            out.push((i, parent));
            if let Some(children) = kids.get(&i) {
                stack.extend(children.iter().rev().map(|&c| (c, Some(me))));
            }
        }
        out
    }

    pub fn normalized(&self) -> NormalizedGraph {
        let nodes = self
            .preorder()
            .into_iter()
            .map(|(i, parent)| {
                let n = &self.nodes[i];
                NormalizedNode {
                    parent,
                    node: n.node.clone(),
                    node_kind: n.node_kind,
                    status: n.status,
                    input: n.input.clone(),
                    output: n.output.clone(),
                }
            })
            .collect();
        NormalizedGraph { nodes }
    }

    /// Merges calls that share the same name path from the root.
    pub fn collapse_by_path(&self) -> PathGraph {
        let mut paths: HashMap<&str, String> = HashMap::new();
        let mut nodes: Vec<PathNode> = Vec::new();
        let mut edges: Vec<PathEdge> = Vec::new();
        for (i, _) in self.preorder() {
            let n = &self.nodes[i];
            let parent_path = n.parent_call_id.as_deref().and_then(|p| paths.get(p)).cloned();
            let path = match &parent_path {
                Some(p) => format!("{p}/{}", n.node),
                None => n.node.clone(),
            };
            match nodes.iter_mut().find(|pn| pn.path == path) {
                Some(existing) => existing.calls += 1,
                None => nodes.push(PathNode { path: path.clone(), node: n.node.clone(), node_kind: n.node_kind, calls: 1 }),
            }
            if let Some(from) = parent_path {
                if !edges.iter().any(|e| e.from == from && e.to == path) {
                    edges.push(PathEdge { from, to: path.clone() });
                }
            }
            paths.insert(n.call_id.as_str(), path);
        }
        PathGraph { nodes, edges }
    }

    /// Synthesizes a minimal event sequence that assembles back into this graph.
    pub fn to_events(&self) -> Vec<EventDraft> {
        let draft = |n: &TraceNode, stage, phase, timestamp, payload| EventDraft {
            call_id: n.call_id.clone(),
            parent_call_id: n.parent_call_id.clone(),
            node: n.node.clone(),
            node_kind: n.node_kind,
            stage,
            phase,
            timestamp,
            payload,
        };
        let mut out = Vec::new();
        for n in &self.nodes {
            out.push(draft(n, LifecycleStage::PreSaveData, Phase::After, n.start_ms, json!({ "input": n.input })));
        }
        for n in &self.nodes {
            match n.status {
                CallStatus::Running => {
                    if n.end_ms != n.start_ms {
                        out.push(draft(n, LifecycleStage::Execute, Phase::Before, n.end_ms, json!({})));
                    }
                }
                status => out.push(draft(
                    n,
                    LifecycleStage::FormatOutput,
                    Phase::After,
                    n.end_ms,
                    json!({ "output": n.output, "status": status.as_str(), "error": n.error }),
                )),
            }
        }
        out
    }
}
