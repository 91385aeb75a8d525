//! In-process tool handlers, bound to `Tool` nodes by name.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use serde_json::{json, Map, Value};

use crate::request::OxyRequest;

pub trait ToolHandler: Send + Sync {
    /// `params` is the node's configured `params` value.
    fn invoke(&self, request: &OxyRequest, params: &Value) -> Result<Value, String>;
}

impl<F> ToolHandler for F
where
    F: Fn(&OxyRequest, &Value) -> Result<Value, String> + Send + Sync,
{
    fn invoke(&self, request: &OxyRequest, params: &Value) -> Result<Value, String> {
        self(request, params)
    }
}

/// Shared in-memory file tree used by the `read_file`, `write_file` and
/// `list_dir` handlers.
#[derive(Default)]
pub struct MemoryFs {
    files: RwLock<BTreeMap<String, String>>,
}

fn normalize_path(path: &str) -> String {
    path.trim().trim_start_matches("./").trim_start_matches('/').to_owned()
}

impl MemoryFs {
    pub fn write(&self, path: &str, content: &str) {
        self.files.write().insert(normalize_path(path), content.to_owned());
    }

    pub fn read(&self, path: &str) -> Option<String> {
        self.files.read().get(&normalize_path(path)).cloned()
    }

    /// Direct entries under `dir` (files and first-level subdirectories).
    pub fn list(&self, dir: &str) -> Vec<String> {
        let dir = normalize_path(dir);
        let prefix = if dir.is_empty() { String::new() } else { format!("{}/", dir.trim_end_matches('/')) };
        let mut out: Vec<String> = self
            .files
            .read()
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix))
            .map(|rest| match rest.split_once('/') {
                Some((sub, _)) => format!("{sub}/"),
                None => rest.to_owned(),
            })
            .collect();
        out.dedup();
        out
    }
}

/// Question/answer pairs exported from approved bank records.
#[derive(Default)]
pub struct KnowledgeBase {
    entries: RwLock<Vec<(String, Value)>>,
}

fn normalize_question(q: &str) -> String {
    q.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl KnowledgeBase {
    pub fn insert(&self, question: &str, answer: Value) {
        self.entries.write().push((normalize_question(question), answer));
    }

    pub fn clear(&self) {
        self.entries.write().clear();
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    /// Exact normalized match first, then the first stored question contained in
    /// the query.
    pub fn lookup(&self, query: &str) -> Option<Value> {
        let q = normalize_question(query);
        let entries = self.entries.read();
        entries
            .iter()
            .find(|(k, _)| *k == q)
            .or_else(|| entries.iter().find(|(k, _)| !k.is_empty() && q.contains(k.as_str())))
            .map(|(_, v)| v.clone())
    }
}

fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    args.get(key).and_then(Value::as_str).ok_or_else(|| format!("missing string argument `{key}`"))
}

/// Handler table. [`ToolRegistry::with_builtins`] installs:
///
/// | handler | behaviour |
/// |---|---|
/// | `echo` | returns the arguments |
/// | `constant` | returns `params.value` |
/// | `sleep` | sleeps `arguments.ms` (or `params.ms`) milliseconds |
/// | `fail` | always errors with `params.message` |
/// | `read_file`, `write_file`, `list_dir` | operate on the shared [`MemoryFs`] |
/// | `knowledge_lookup` | answers `arguments.query` from the [`KnowledgeBase`] |
pub struct ToolRegistry {
    handlers: RwLock<HashMap<String, Arc<dyn ToolHandler>>>,
    fs: Arc<MemoryFs>,
    knowledge: Arc<KnowledgeBase>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ToolRegistry {
    pub fn empty() -> Self {
        Self { handlers: RwLock::new(HashMap::new()), fs: Arc::default(), knowledge: Arc::default() }
    }

    pub fn with_builtins() -> Self {
        let reg = Self::empty();
        reg.register("echo", |req: &OxyRequest, _: &Value| Ok(Value::Object(req.arguments.clone())));
        reg.register("constant", |_: &OxyRequest, params: &Value| Ok(params.get("value").cloned().unwrap_or(Value::Null)));
        reg.register("sleep", |req: &OxyRequest, params: &Value| {
            let ms = req
                .arguments
                .get("ms")
                .and_then(Value::as_u64)
                .or_else(|| params.get("ms").and_then(Value::as_u64))
                .unwrap_or(0);
            std::thread::sleep(Duration::from_millis(ms));
            Ok(json!({ "slept_ms": ms }))
        });
        reg.register("fail", |_: &OxyRequest, params: &Value| {
            Err(params.get("message").and_then(Value::as_str).unwrap_or("tool failed").to_owned())
        });
        let fs = reg.fs.clone();
        reg.register("read_file", move |req: &OxyRequest, _: &Value| {
            let path = str_arg(&req.arguments, "path")?;
            fs.read(path).map(Value::String).ok_or_else(|| format!("no such file: {path}"))
        });
        let fs = reg.fs.clone();
        reg.register("write_file", move |req: &OxyRequest, _: &Value| {
            let path = str_arg(&req.arguments, "path")?;
            let content = str_arg(&req.arguments, "content")?;
            fs.write(path, content);
            Ok(json!({ "written": path, "bytes": content.len() }))
        });
        let fs = reg.fs.clone();
        reg.register("list_dir", move |req: &OxyRequest, _: &Value| {
            let dir = req.arguments.get("path").and_then(Value::as_str).unwrap_or("");
            Ok(json!(fs.list(dir)))
        });
        let kb = reg.knowledge.clone();
        reg.register("knowledge_lookup", move |req: &OxyRequest, _: &Value| {
            let query = str_arg(&req.arguments, "query")?;
            kb.lookup(query).ok_or_else(|| format!("no knowledge for: {query}"))
        });
        reg
    }

    pub fn register(&self, name: &str, handler: impl ToolHandler + 'static) {
        self.handlers.write().insert(name.to_owned(), Arc::new(handler));
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn ToolHandler>> {
        self.handlers.read().get(name).cloned()
    }

    pub fn fs(&self) -> &Arc<MemoryFs> {
        &self.fs
    }

    pub fn knowledge(&self) -> &Arc<KnowledgeBase> {
        &self.knowledge
    }
}
