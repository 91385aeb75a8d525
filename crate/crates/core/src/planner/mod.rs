//! Permission-driven ReAct planning.
//!
//! The loop lives here; the runtime supplies model completions and delegated
//! calls through [`ReactEnv`], so every model call and delegation still passes
//! through the traced lifecycle.

mod parse;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::error::RegistryError;
use crate::model::ChatMessage;
use crate::node::OxySpec;
use crate::registry::Registry;
use crate::request::OxyResponse;

pub use parse::{parse_action, Parsed};

/// Observations longer than this are cut in the rendered prompt.
pub const OBSERVATION_PROMPT_LIMIT: usize = 8 * 1024;

pub const REACT_PROMPT_TEMPLATE: &str = include_str!("../../templates/react_prompt.v1.txt");
pub const REACT_PROMPT_VERSION: &str = "react_prompt.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ActionDecision {
    Call { callee: String, arguments: Map<String, Value> },
    Final { answer: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum MemoryEntry {
    SystemPrompt { text: String },
    UserQuery { text: String },
    ModelThought { text: String },
    ActionTaken { decision: ActionDecision },
    Observation { node: String, value: Value },
    FailureObservation { node: String, error: String },
}

/// Append-only reasoning memory of one ReAct loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReactMemory {
    entries: Vec<MemoryEntry>,
}

impl ReactMemory {
    pub fn new(system_prompt: &str, query: &str) -> Self {
        Self {
            entries: vec![
                MemoryEntry::SystemPrompt { text: system_prompt.to_owned() },
                MemoryEntry::UserQuery { text: query.to_owned() },
            ],
        }
    }

    pub fn push(&mut self, entry: MemoryEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, MemoryEntry::FailureObservation { .. })).count()
    }

    pub fn observations(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, MemoryEntry::Observation { .. })).count()
    }

    fn system_prompt(&self) -> &str {
        self.entries
            .iter()
            .find_map(|e| match e {
                MemoryEntry::SystemPrompt { text } => Some(text.as_str()),
                _ => None,
            })
            .unwrap_or("")
    }

    /// Conversation lines shown to the model (the system prompt is sent separately).
    pub fn render(&self) -> String {
        let mut lines = Vec::with_capacity(self.entries.len());
        for entry in &self.entries {
            match entry {
                MemoryEntry::SystemPrompt { .. } => {}
                MemoryEntry::UserQuery { text } => lines.push(format!("Query: {text}")),
                MemoryEntry::ModelThought { text } => lines.push(format!("Thought: {text}")),
                MemoryEntry::ActionTaken { decision } => {
                    if let ActionDecision::Call { callee, arguments } = decision {
                        let action = serde_json::json!({ "tool_name": callee, "arguments": arguments });
                        lines.push(format!("Action: {action}"));
                    }
                }
                MemoryEntry::Observation { node, value } => {
                    lines.push(format!("Observation from {node}: {}", truncate_for_prompt(&value_text(value))))
                }
                MemoryEntry::FailureObservation { node, error } => lines.push(format!("Failure from {node}: {error}")),
            }
        }
        lines.join("\n")
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn truncate_for_prompt(text: &str) -> String {
    if text.len() <= OBSERVATION_PROMPT_LIMIT {
        return text.to_owned();
    }
    let mut cut = OBSERVATION_PROMPT_LIMIT;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}... [truncated {} bytes]", &text[..cut], text.len() - cut)
}

/// Appends a failure; earlier entries are never touched.
pub fn encapsulate_failure(node: &str, error: &str, memory: &mut ReactMemory) {
    memory.push(MemoryEntry::FailureObservation { node: node.to_owned(), error: error.to_owned() });
}

pub fn denied_text(caller: &str, callee: &str) -> String {
    format!("permission denied: {caller} -> {callee}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", content = "reason", rename_all = "snake_case")]
pub enum Authorization {
    Allowed,
    Denied(String),
}

/// Allowed iff `callee` is in the caller's permitted list at this moment.
pub fn authorize(caller: &str, callee: &str, registry: &Registry) -> Result<Authorization, RegistryError> {
    let spec = registry.resolve(caller)?;
    Ok(if spec.permitted_callees.iter().any(|c| c == callee) {
        Authorization::Allowed
    } else {
        Authorization::Denied(denied_text(caller, callee))
    })
}

/// `(name, description)` of each permitted callee in declared order.
pub fn tool_listing(agent: &OxySpec, registry: &Registry) -> Vec<(String, String)> {
    agent
        .permitted_callees
        .iter()
        .map(|name| {
            let description = registry.resolve(name).map(|s| s.description.clone()).unwrap_or_default();
            (name.clone(), description)
        })
        .collect()
}

/// Renders the planning prompt for one round.
pub fn render_messages(template: &str, tools: &[(String, String)], memory: &ReactMemory) -> Vec<ChatMessage> {
    let tool_block = if tools.is_empty() {
        "(none)".to_owned()
    } else {
        tools.iter().map(|(n, d)| format!("{n}: {d}")).collect::<Vec<_>>().join("\n")
    };
    let body = template.replace("{tools}", &tool_block).replace("{memory}", &memory.render());
    vec![ChatMessage::system(memory.system_prompt()), ChatMessage::user(body)]
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("gave up after {0} unparseable completions")]
    RetryExhausted(u32),
}

/// Source of completions for the planning model.
pub trait PlanModel {
    fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, String>;
}

impl<F> PlanModel for F
where
    F: Fn(Vec<ChatMessage>) -> Result<String, String>,
{
    fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, String> {
        self(messages)
    }
}

/// One planning decision. Unparseable completions are recorded as failures of
/// `model_node` and retried, up to `retry_limit` attempts in total.
pub fn plan_step(
    model_node: &str,
    tools: &[(String, String)],
    retry_limit: u32,
    memory: &mut ReactMemory,
    model: &dyn PlanModel,
) -> Result<ActionDecision, PlanError> {
    let attempts = retry_limit.max(1);
    for _ in 0..attempts {
        let text = model
            .complete(render_messages(REACT_PROMPT_TEMPLATE, tools, memory))
            .map_err(PlanError::ModelUnavailable)?;
        match parse_action(&text) {
            Parsed::Decision(d) => return Ok(d),
            Parsed::ParseFailure(detail) => encapsulate_failure(model_node, &format!("parse failure: {detail}"), memory),
        }
    }
    Err(PlanError::RetryExhausted(attempts))
}

/// Hooks the loop needs from the runtime.
pub trait ReactEnv {
    /// Completion from the agent's model node.
    fn complete(&self, model_node: &str, messages: Vec<ChatMessage>) -> Result<String, String>;
    /// Executes an authorized delegation.
    fn delegate(&self, callee: &str, arguments: Map<String, Value>) -> OxyResponse;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactOutcome {
    pub answer: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub memory: ReactMemory,
    /// Planning rounds consumed, i.e. calls attempted.
    pub rounds: u32,
}

impl ReactOutcome {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs the ReAct loop for `agent` on `query`.
pub fn run_react(agent: &OxySpec, query: &str, registry: &Registry, env: &dyn ReactEnv) -> ReactOutcome {
    let cfg = match agent.agent_config() {
        Ok(cfg) => cfg,
        Err(e) => {
            return ReactOutcome { answer: None, error: Some(e), memory: ReactMemory::new("", query), rounds: 0 };
        }
    };
    let mut memory = ReactMemory::new(&cfg.system_prompt, query);
    let tools = tool_listing(agent, registry);
    let model = |messages: Vec<ChatMessage>| env.complete(&cfg.model, messages);
    let mut rounds = 0u32;
    let mut fail_streak = 0u32;
    let finish = |memory: ReactMemory, rounds: u32, result: Result<Value, String>| match result {
        Ok(answer) => ReactOutcome { answer: Some(answer), error: None, memory, rounds },
        Err(e) => ReactOutcome { answer: None, error: Some(e), memory, rounds },
    };
    loop {
        let decision = match plan_step(&cfg.model, &tools, cfg.retry_limit, &mut memory, &model) {
            Ok(d) => d,
            Err(e) => return finish(memory, rounds, Err(e.to_string())),
        };
        let (callee, arguments) = match decision {
            ActionDecision::Final { answer } => return finish(memory, rounds, Ok(answer)),
            ActionDecision::Call { callee, arguments } => (callee, arguments),
        };
        if rounds >= cfg.max_react_rounds {
            let msg = format!("exceeded max_react_rounds ({})", cfg.max_react_rounds);
            return finish(memory, rounds, Err(msg));
        }
        rounds += 1;
        memory.push(MemoryEntry::ActionTaken {
            decision: ActionDecision::Call { callee: callee.clone(), arguments: arguments.clone() },
        });
        let failed = match authorize(&agent.name, &callee, registry) {
            Ok(Authorization::Allowed) => {
                let resp = env.delegate(&callee, arguments);
                if resp.is_ok() {
                    memory.push(MemoryEntry::Observation { node: callee, value: resp.output });
                    false
                } else {
                    let detail = resp.error_detail.unwrap_or_else(|| "call failed".into());
                    encapsulate_failure(&callee, &detail, &mut memory);
                    true
                }
            }
            Ok(Authorization::Denied(reason)) => {
                encapsulate_failure(&callee, &reason, &mut memory);
                true
            }
            Err(e) => {
                encapsulate_failure(&callee, &e.to_string(), &mut memory);
                true
            }
        };
        fail_streak = if failed { fail_streak + 1 } else { 0 };
        if fail_streak >= cfg.fail_streak_limit {
            let msg = format!("{fail_streak} consecutive failed actions");
            return finish(memory, rounds, Err(msg));
        }
    }
}
