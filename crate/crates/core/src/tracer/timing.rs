use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExecutionGraph;
use crate::node::NodeKind;

/// Time attribution for one call. `self_ms + llm_ms + tool_ms + agent_ms`
/// equals `inclusive_ms` unless concurrent children overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallTiming {
    pub call_id: String,
    pub node: String,
    pub node_kind: NodeKind,
    pub inclusive_ms: u64,
    pub self_ms: u64,
    pub llm_ms: u64,
    pub tool_ms: u64,
    /// Time spent in sub-agents and flows.
    pub agent_ms: u64,
}

/// Aggregate over every call of one node name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryTimes {
    pub calls: usize,
    pub inclusive_ms: u64,
    pub self_ms: u64,
    pub llm_ms: u64,
    pub tool_ms: u64,
    pub agent_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub trace_id: String,
    pub version_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_call_id: Option<String>,
    pub wall_ms: u64,
    pub calls: Vec<CallTiming>,
    pub per_node: BTreeMap<String, CategoryTimes>,
}

pub fn timing_report(graph: &ExecutionGraph) -> TimingBreakdown {
    let calls: Vec<CallTiming> = graph
        .nodes
        .iter()
        .map(|n| {
            let (mut llm, mut tool, mut agent) = (0u64, 0u64, 0u64);
            for child in graph.children(&n.call_id) {
                let slot = match child.node_kind {
                    NodeKind::Llm => &mut llm,
                    NodeKind::Tool => &mut tool,
                    NodeKind::Agent | NodeKind::Flow => &mut agent,
                };
                *slot += child.duration_ms;
            }
            CallTiming {
                call_id: n.call_id.clone(),
                node: n.node.clone(),
                node_kind: n.node_kind,
                inclusive_ms: n.duration_ms,
                self_ms: n.duration_ms.saturating_sub(llm + tool + agent),
                llm_ms: llm,
                tool_ms: tool,
                agent_ms: agent,
            }
        })
        .collect();
    let mut per_node: BTreeMap<String, CategoryTimes> = BTreeMap::new();
    for c in &calls {
        let agg = per_node.entry(c.node.clone()).or_default();
        agg.calls += 1;
        agg.inclusive_ms += c.inclusive_ms;
        agg.self_ms += c.self_ms;
        agg.llm_ms += c.llm_ms;
        agg.tool_ms += c.tool_ms;
        agg.agent_ms += c.agent_ms;
    }
    let root = graph.root();
    TimingBreakdown {
        trace_id: graph.trace_id.clone(),
        version_id: graph.version_id.clone(),
        root_call_id: root.map(|r| r.call_id.clone()),
        wall_ms: root.map(|r| r.duration_ms).unwrap_or(0),
        calls,
        per_node,
    }
}
