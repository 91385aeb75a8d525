//! Node specifications: the four component kinds and their per-kind config.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Caller name used for calls that originate outside the MAS.
pub const USER_CALLER: &str = "__user__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Agent,
    Tool,
    Llm,
    Flow,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [NodeKind::Agent, NodeKind::Tool, NodeKind::Llm, NodeKind::Flow];

    /// Tools and model nodes never delegate.
    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::Tool | NodeKind::Llm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Agent => "agent",
            NodeKind::Tool => "tool",
            NodeKind::Llm => "llm",
            NodeKind::Flow => "flow",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A registered atomic component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OxySpec {
    pub name: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub description: String,
    /// Declared order is the tie-break order used when rendering prompts.
    #[serde(default)]
    pub permitted_callees: Vec<String>,
    #[serde(default)]
    pub config: Map<String, Value>,
}

pub const DEFAULT_MAX_REACT_ROUNDS: u32 = 16;
pub const DEFAULT_RETRY_LIMIT: u32 = 3;
pub const DEFAULT_FAIL_STREAK_LIMIT: u32 = 3;

fn default_max_react_rounds() -> u32 {
    DEFAULT_MAX_REACT_ROUNDS
}

fn default_retry_limit() -> u32 {
    DEFAULT_RETRY_LIMIT
}

fn default_fail_streak_limit() -> u32 {
    DEFAULT_FAIL_STREAK_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Name of the `Llm` node this agent reasons with.
    pub model: String,
    #[serde(default)]
    pub system_prompt: String,
    #[serde(default = "default_max_react_rounds")]
    pub max_react_rounds: u32,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_fail_streak_limit")]
    pub fail_streak_limit: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolConfig {
    pub handler: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Name of a model binding declared in the MAS config.
    pub binding: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStep {
    pub callee: String,
    /// When absent the step receives `{"query": <previous output>}`.
    #[serde(default)]
    pub arguments: Option<Map<String, Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub steps: Vec<FlowStep>,
}

impl OxySpec {
    pub fn new(name: impl Into<String>, kind: NodeKind) -> Self {
        Self {
            name: name.into(),
            kind,
            description: String::new(),
            permitted_callees: Vec::new(),
            config: Map::new(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_callees<I, S>(mut self, callees: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.permitted_callees = callees.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_config(mut self, config: Value) -> Self {
        if let Value::Object(map) = config {
            self.config = map;
        }
        self
    }

    pub fn agent(name: &str, model: &str, system_prompt: &str) -> Self {
        Self::new(name, NodeKind::Agent).with_config(serde_json::json!({
            "model": model,
            "system_prompt": system_prompt,
        }))
    }

    pub fn tool(name: &str, handler: &str) -> Self {
        Self::new(name, NodeKind::Tool).with_config(serde_json::json!({ "handler": handler }))
    }

    pub fn llm(name: &str, binding: &str) -> Self {
        Self::new(name, NodeKind::Llm).with_config(serde_json::json!({ "binding": binding }))
    }

    fn typed_config<T: serde::de::DeserializeOwned>(&self) -> Result<T, String> {
        serde_json::from_value(Value::Object(self.config.clone()))
            .map_err(|e| format!("{} config for `{}`: {e}", self.kind, self.name))
    }

    pub fn agent_config(&self) -> Result<AgentConfig, String> {
        self.expect_kind(NodeKind::Agent)?;
        self.typed_config()
    }

    pub fn tool_config(&self) -> Result<ToolConfig, String> {
        self.expect_kind(NodeKind::Tool)?;
        self.typed_config()
    }

    pub fn llm_config(&self) -> Result<LlmConfig, String> {
        self.expect_kind(NodeKind::Llm)?;
        self.typed_config()
    }

    pub fn flow_config(&self) -> Result<FlowConfig, String> {
        self.expect_kind(NodeKind::Flow)?;
        self.typed_config()
    }

    fn expect_kind(&self, kind: NodeKind) -> Result<(), String> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(format!("`{}` is a {} node, not {kind}", self.name, self.kind))
        }
    }

    /// Checks the structural invariants that do not depend on other nodes.
    pub fn check(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("node name must be non-empty".into());
        }
        if self.kind.is_leaf() && !self.permitted_callees.is_empty() {
            return Err(format!("{} node `{}` cannot have permitted callees", self.kind, self.name));
        }
        if self.permitted_callees.iter().any(|c| c.is_empty()) {
            return Err(format!("`{}` lists an empty callee name", self.name));
        }
        match self.kind {
            NodeKind::Agent => {
                let cfg = self.agent_config()?;
                if cfg.model.is_empty() {
                    return Err(format!("agent `{}` has no model", self.name));
                }
                if cfg.max_react_rounds == 0 || cfg.retry_limit == 0 || cfg.fail_streak_limit == 0 {
                    return Err(format!("agent `{}` has a zero loop bound", self.name));
                }
            }
            NodeKind::Tool => {
                self.tool_config()?;
            }
            NodeKind::Llm => {
                self.llm_config()?;
            }
            NodeKind::Flow => {
                self.flow_config()?;
            }
        }
        Ok(())
    }

    /// Model node referenced by an agent, if any.
    pub fn model_node(&self) -> Option<String> {
        match self.kind {
            NodeKind::Agent => self.config.get("model").and_then(Value::as_str).map(str::to_owned),
            _ => None,
        }
    }
}
