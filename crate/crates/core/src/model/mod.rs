//! Chat-completion adapter with a deterministic scripted binding and an
//! OpenAI-compatible HTTP binding.

mod http;
mod scripted;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::ModelError;

pub use http::HttpModel;
pub use scripted::{ScriptRule, ScriptSpec, ScriptedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Flattens a message list into the single text that scripted rules match against.
pub fn render_prompt(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("[{}]\n{}", m.role.as_str(), m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A chat-completion backend.
///
/// `session` scopes mutable scripted state (rule use counts) to one run so that
/// repeated runs replay identically; HTTP bindings ignore it.
pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], session: &str) -> Result<String, ModelError>;
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BindingKind {
    Scripted {
        /// JSON rules file, resolved relative to the config file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rules_file: Option<PathBuf>,
        /// Inline alternative to `rules_file`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<ScriptSpec>,
    },
    HttpCompatible {
        base_url: String,
        model: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        /// Name of the environment variable holding the bearer token.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auth_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBinding {
    pub name: String,
    #[serde(flatten)]
    pub kind: BindingKind,
    /// Sampling parameters forwarded verbatim to HTTP backends.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

impl ModelBinding {
    pub fn scripted(name: &str, script: ScriptSpec) -> Self {
        Self {
            name: name.to_owned(),
            kind: BindingKind::Scripted { rules_file: None, script: Some(script) },
            params: Map::new(),
        }
    }

    /// Instantiates the backend. `base_dir` anchors relative rules paths.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<Arc<dyn ChatModel>, ModelError> {
        match &self.kind {
            BindingKind::Scripted { rules_file, script } => {
                let spec = match (rules_file, script) {
                    (_, Some(script)) => script.clone(),
                    (Some(path), None) => {
                        let path = match base_dir {
                            Some(dir) if path.is_relative() => dir.join(path),
                            _ => path.clone(),
                        };
                        ScriptSpec::load(&path)?
                    }
                    (None, None) => {
                        return Err(ModelError::InvalidBinding(format!(
                            "scripted binding `{}` needs rules_file or script",
                            self.name
                        )))
                    }
                };
                Ok(Arc::new(ScriptedModel::new(spec)?))
            }
            BindingKind::HttpCompatible { base_url, model, timeout_ms, auth_env } => Ok(Arc::new(HttpModel::new(
                base_url.clone(),
                model.clone(),
                *timeout_ms,
                auth_env.clone(),
                self.params.clone(),
            ))),
        }
    }
}

/// Named model backends available to `Llm` nodes.
#[derive(Default)]
pub struct ModelRegistry {
    models: RwLock<HashMap<String, Arc<dyn ChatModel>>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, name: &str, model: Arc<dyn ChatModel>) {
        self.models.write().insert(name.to_owned(), model);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn ChatModel>> {
        self.models.read().get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.models.read().contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.models.read().keys().cloned().collect();
        names.sort();
        names
    }
}
