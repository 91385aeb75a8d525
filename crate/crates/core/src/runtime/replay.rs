//! Bookkeeping for regeneration: maps the re-run's calls onto the recorded tree.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::lifecycle::{LifecycleStage, Phase};
use crate::request::OxyResponse;
use crate::tracer::{CallStatus, ExecutionGraph, TraceEvent};

/// Changes applied to the regenerated call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    /// Shallow-merged into the call's arguments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arguments: Option<Map<String, Value>>,
    /// Agent calls only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    /// Must name a registered model binding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_binding: Option<String>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.arguments.is_none() && self.system_prompt.is_none() && self.model_binding.is_none()
    }

    pub fn describe(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        }
    }
}

pub(crate) struct RecordedCall {
    pub node: String,
    pub children: Vec<String>,
    /// Finished before the regenerated call started.
    pub completed_before: bool,
    /// Number of this call's events inside the inherited prefix.
    pub prefix_events: usize,
    pub status: CallStatus,
    pub output: Value,
    pub error: Option<String>,
}

impl RecordedCall {
    pub fn response(&self) -> OxyResponse {
        match self.status {
            CallStatus::Error => OxyResponse::error(self.error.clone().unwrap_or_default(), self.output.clone()),
            _ => OxyResponse::ok(self.output.clone()),
        }
    }
}

pub(crate) struct ReplayPlan {
    pub target: String,
    pub overrides: Overrides,
    pub calls: HashMap<String, RecordedCall>,
}

impl ReplayPlan {
    pub fn build(graph: &ExecutionGraph, events: &[TraceEvent], target: &str, branch_seq: u64, overrides: Overrides) -> Self {
        let mut calls: HashMap<String, RecordedCall> = graph
            .nodes
            .iter()
            .map(|n| {
                let rec = RecordedCall {
                    node: n.node.clone(),
                    children: graph.children(&n.call_id).iter().map(|c| c.call_id.clone()).collect(),
                    completed_before: false,
                    prefix_events: 0,
                    status: n.status,
                    output: n.output.clone(),
                    error: n.error.clone(),
                };
                (n.call_id.clone(), rec)
            })
            .collect();
        for e in events.iter().filter(|e| e.seq < branch_seq) {
            if let Some(rec) = calls.get_mut(&e.call_id) {
                rec.prefix_events += 1;
                if e.stage == LifecycleStage::FormatOutput && e.phase == Phase::After {
                    rec.completed_before = true;
                }
            }
        }
        Self { target: target.to_owned(), overrides, calls }
    }
}

/// Per-run replay cursor.
pub(crate) struct ReplayState {
    pub plan: ReplayPlan,
    /// Set once the target starts (or the re-run diverges); later calls run live.
    pub live: bool,
}

/// How a child call should proceed during regeneration.
pub(crate) enum ChildReplay {
    Live,
    /// Serve the recorded response; nothing is executed or traced.
    Recorded(OxyResponse),
    /// Re-enter a call that was in flight when the target started.
    Resume { call_id: String, suppress: usize },
    /// The regenerated call itself.
    Target(Overrides),
}

impl ReplayState {
    pub fn child(&mut self, parent_recorded: Option<&str>, ordinal: usize, callee: &str) -> ChildReplay {
        if self.live {
            return ChildReplay::Live;
        }
        let Some(child_id) = parent_recorded
            .and_then(|p| self.plan.calls.get(p))
            .and_then(|p| p.children.get(ordinal))
            .cloned()
        else {
            self.live = true;
            return ChildReplay::Live;
        };
        let rec = &self.plan.calls[&child_id];
        if rec.node != callee {
            // the re-run took a different path; nothing downstream can be mapped
            self.live = true;
            return ChildReplay::Live;
        }
        if child_id == self.plan.target {
            self.live = true;
            return ChildReplay::Target(self.plan.overrides.clone());
        }
        if rec.completed_before {
            return ChildReplay::Recorded(rec.response());
        }
        ChildReplay::Resume { call_id: child_id, suppress: rec.prefix_events }
    }
}
