use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::ScopeError;
use crate::scopes::{ScopeLevel, ScopeStore};

/// Default bound on nested delegation.
pub const DEFAULT_MAX_CALL_DEPTH: usize = 32;

/// Envelope for one call through the lifecycle.
#[derive(Clone, Serialize, Deserialize)]
pub struct OxyRequest {
    /// Identifies the whole run; shared by every call under one root request.
    pub request_id: String,
    pub trace_id: String,
    pub version_id: String,
    pub call_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_call_id: Option<String>,
    pub caller: String,
    pub callee: String,
    /// Node-scope data.
    #[serde(default)]
    pub arguments: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    /// Callers from the root to `caller`, inclusive.
    pub call_chain: Vec<String>,
    #[serde(skip, default = "detached_store")]
    pub scope_handle: Arc<ScopeStore>,
}

fn detached_store() -> Arc<ScopeStore> {
    Arc::new(ScopeStore::new())
}

impl std::fmt::Debug for OxyRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OxyRequest")
            .field("request_id", &self.request_id)
            .field("call_id", &self.call_id)
            .field("caller", &self.caller)
            .field("callee", &self.callee)
            .field("arguments", &self.arguments)
            .field("call_chain", &self.call_chain)
            .finish_non_exhaustive()
    }
}

impl OxyRequest {
    pub fn depth(&self) -> usize {
        self.call_chain.len()
    }

    pub fn set_global(&self, level: ScopeLevel, key: &str, value: Value) -> Result<(), ScopeError> {
        self.scope_handle.set(&self.request_id, self.group_id.as_deref(), level, key, value)
    }

    pub fn get_global(&self, level: ScopeLevel, key: &str) -> Result<Option<Value>, ScopeError> {
        self.scope_handle.get(&self.request_id, self.group_id.as_deref(), level, key)
    }

    /// Scoped write at any tier; `Node` writes go to this call's arguments.
    pub fn scoped_set(&mut self, level: ScopeLevel, key: &str, value: Value) -> Result<(), ScopeError> {
        if key.is_empty() {
            return Err(ScopeError::EmptyKey);
        }
        match level {
            ScopeLevel::Node => {
                self.arguments.insert(key.to_owned(), value);
                Ok(())
            }
            _ => self.set_global(level, key, value),
        }
    }

    pub fn scoped_get(&self, level: ScopeLevel, key: &str) -> Result<Option<Value>, ScopeError> {
        if key.is_empty() {
            return Err(ScopeError::EmptyKey);
        }
        match level {
            ScopeLevel::Node => Ok(self.arguments.get(key).cloned()),
            _ => self.get_global(level, key),
        }
    }

    /// Query text for agents: `arguments.query` when it is a string, else the
    /// arguments serialized as JSON.
    pub fn query_text(&self) -> String {
        match self.arguments.get("query") {
            Some(Value::String(q)) => q.clone(),
            _ => Value::Object(self.arguments.clone()).to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OxyResponse {
    pub status: ResponseStatus,
    pub output: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    /// Per-stage durations in milliseconds.
    #[serde(default)]
    pub timing: BTreeMap<String, f64>,
}

impl OxyResponse {
    pub fn ok(output: Value) -> Self {
        Self { status: ResponseStatus::Ok, output, error_detail: None, timing: BTreeMap::new() }
    }

    pub fn error(detail: impl Into<String>, output: Value) -> Self {
        let mut detail = detail.into();
        if detail.is_empty() {
            detail = "unspecified error".into();
        }
        Self { status: ResponseStatus::Error, output, error_detail: Some(detail), timing: BTreeMap::new() }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ResponseStatus::Ok
    }

    /// Output as display text: strings verbatim, other values as JSON.
    pub fn output_text(&self) -> String {
        match &self.output {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}
