//! Declarative MAS configuration (JSON or YAML).
//!
//! ```json
//! {
//!   "entrypoint": "master_agent",
//!   "nodes": [ { "name": "...", "kind": "agent|tool|llm|flow", ... } ],
//!   "model_bindings": [ { "name": "scripted", "type": "scripted", "rules_file": "rules.json" } ],
//!   "runtime": { "max_call_depth": 32, "planning_mode": "react" },
//!   "files": { "notes/todo.txt": "buy milk" }
//! }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ModelError, RegistryError};
use crate::model::ModelBinding;
use crate::node::OxySpec;
use crate::runtime::{Runtime, RuntimeOptions};
use crate::tracer::TraceStore;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("entrypoint `{0}` is not a registered agent")]
    BadEntrypoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entrypoint: Option<String>,
    pub nodes: Vec<OxySpec>,
    #[serde(default)]
    pub model_bindings: Vec<ModelBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RuntimeOptions>,
    /// Initial contents of the in-memory file tree used by the file tools.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub files: BTreeMap<String, String>,
    /// Directory that relative paths (rules files) resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl MasConfig {
    /// Parses JSON, or YAML when `is_yaml` is set.
    pub fn parse(text: &str, is_yaml: bool) -> Result<Self, String> {
        if is_yaml {
            serde_yaml::from_str(text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(text).map_err(|e| e.to_string())
        }
    }

    /// Loads a config file; `.yaml`/`.yml` files are read as YAML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let is_yaml = matches!(path.extension().and_then(|e| e.to_str()), Some("yaml" | "yml"));
        let mut cfg = Self::parse(&text, is_yaml).map_err(|detail| ConfigError::Parse { path: path.to_owned(), detail })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Registers everything into `runtime`.
    pub fn apply(&self, runtime: &Runtime) -> Result<(), ConfigError> {
        for binding in &self.model_bindings {
            runtime.models().insert(&binding.name, binding.build(self.base_dir.as_deref())?);
        }
        for spec in &self.nodes {
            runtime.registry().register(spec.clone())?;
        }
        if let Some(entry) = &self.entrypoint {
            match runtime.registry().resolve(entry) {
                Ok(spec) if spec.kind == crate::node::NodeKind::Agent || spec.kind == crate::node::NodeKind::Flow => {
                    runtime.registry().set_entrypoint(entry)
                }
                _ => return Err(ConfigError::BadEntrypoint(entry.clone())),
            }
        }
        if let Some(options) = &self.runtime {
            runtime.set_options(options.clone());
        }
        for (path, content) in &self.files {
            runtime.tools().fs().write(path, content);
        }
        Ok(())
    }

    pub fn build_runtime(&self, traces: Arc<TraceStore>) -> Result<Runtime, ConfigError> {
        let runtime = Runtime::new(traces);
        self.apply(&runtime)?;
        Ok(runtime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const YAML: &str = r#"
entrypoint: master
nodes:
  - name: master
    kind: agent
    permitted_callees: [echo_tool]
    config: { model: llm, system_prompt: "You are the master agent." }
  - name: echo_tool
    kind: tool
    description: echoes
    config: { handler: echo }
  - name: llm
    kind: llm
    config: { binding: scripted }
model_bindings:
  - name: scripted
    type: scripted
    script:
      rules:
        - match: "master agent"
          reply: "done"
"#;

    #[test]
    fn yaml_and_json_agree() {
        let from_yaml = MasConfig::parse(YAML, true).unwrap();
        let json = serde_json::to_string(&from_yaml).unwrap();
        let from_json = MasConfig::parse(&json, false).unwrap();
        assert_eq!(from_yaml, from_json);
    }

    #[test]
    fn builds_a_runnable_runtime() {
        let cfg = MasConfig::parse(YAML, true).unwrap();
        let rt = cfg.build_runtime(Arc::new(TraceStore::in_memory())).unwrap();
        let run = rt.chat("hi", None).unwrap();
        assert_eq!(run.answer_text(), "done");
    }

    #[test]
    fn entrypoint_must_exist() {
        let mut cfg = MasConfig::parse(YAML, true).unwrap();
        cfg.entrypoint = Some("ghost".into());
        assert!(matches!(
            cfg.build_runtime(Arc::new(TraceStore::in_memory())),
            Err(ConfigError::BadEntrypoint(_))
        ));
    }
}
