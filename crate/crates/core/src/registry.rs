//! Node registry and static topology checks.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use parking_lot::RwLock;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::RegistryError;
use crate::node::{NodeKind, OxySpec};

#[derive(Default)]
struct Inner {
    specs: HashMap<String, Arc<OxySpec>>,
    order: Vec<String>,
    entrypoints: BTreeSet<String>,
}

/// Concurrent-read registry; registrations are serialized behind a write lock.
#[derive(Default)]
pub struct Registry {
    inner: RwLock<Inner>,
}

/// Acknowledgment returned by [`Registry::register`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Registration {
    pub name: String,
    /// Zero-based registration order.
    pub position: usize,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a node. Permitted callees may name nodes that do not exist yet.
    pub fn register(&self, spec: OxySpec) -> Result<Registration, RegistryError> {
        spec.check().map_err(RegistryError::InvalidSpec)?;
        let mut inner = self.inner.write();
        if inner.specs.contains_key(&spec.name) {
            return Err(RegistryError::NameConflict(spec.name));
        }
        let position = inner.order.len();
        let name = spec.name.clone();
        inner.order.push(name.clone());
        inner.specs.insert(name.clone(), Arc::new(spec));
        Ok(Registration { name, position })
    }

    pub fn resolve(&self, name: &str) -> Result<Arc<OxySpec>, RegistryError> {
        self.inner
            .read()
            .specs
            .get(name)
            .cloned()
            .ok_or_else(|| RegistryError::NodeNotFound(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.inner.read().specs.contains_key(name)
    }

    /// Hot-updates one config key of a registered node, e.g. an applied prompt.
    pub fn update_config(&self, name: &str, key: &str, value: Value) -> Result<(), RegistryError> {
        let mut inner = self.inner.write();
        let current = inner
            .specs
            .get(name)
            .ok_or_else(|| RegistryError::NodeNotFound(name.to_owned()))?;
        let mut next = OxySpec::clone(current);
        next.config.insert(key.to_owned(), value);
        next.check().map_err(RegistryError::InvalidSpec)?;
        inner.specs.insert(name.to_owned(), Arc::new(next));
        Ok(())
    }

    pub fn set_entrypoint(&self, name: &str) {
        self.inner.write().entrypoints.insert(name.to_owned());
    }

    pub fn entrypoints(&self) -> Vec<String> {
        self.inner.read().entrypoints.iter().cloned().collect()
    }

    /// Specs in registration order.
    pub fn snapshot(&self) -> Vec<OxySpec> {
        let inner = self.inner.read();
        inner.order.iter().map(|n| OxySpec::clone(&inner.specs[n])).collect()
    }

    pub fn validate_topology(&self) -> Vec<TopologyIssue> {
        let (specs, entrypoints) = {
            let inner = self.inner.read();
            let specs: Vec<OxySpec> = inner.order.iter().map(|n| OxySpec::clone(&inner.specs[n])).collect();
            (specs, inner.entrypoints.clone())
        };
        validate_specs(&specs, &entrypoints)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum TopologyIssue {
    DanglingPermission { node: String, callee: String },
    DanglingModel { node: String, model: String },
    LeafWithPermissions { node: String },
    UnreachableNode { node: String },
    /// Agents that can delegate to each other in a loop. Informational only.
    Cycle { nodes: Vec<String> },
}

impl TopologyIssue {
    pub fn severity(&self) -> Severity {
        match self {
            TopologyIssue::Cycle { .. } => Severity::Info,
            _ => Severity::Error,
        }
    }

    pub fn node(&self) -> &str {
        match self {
            TopologyIssue::DanglingPermission { node, .. }
            | TopologyIssue::DanglingModel { node, .. }
            | TopologyIssue::LeafWithPermissions { node }
            | TopologyIssue::UnreachableNode { node } => node,
            TopologyIssue::Cycle { nodes } => nodes.first().map(String::as_str).unwrap_or(""),
        }
    }
}

impl std::fmt::Display for TopologyIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TopologyIssue::DanglingPermission { node, callee } => write!(f, "DanglingPermission({node}->{callee})"),
            TopologyIssue::DanglingModel { node, model } => write!(f, "DanglingModel({node}->{model})"),
            TopologyIssue::LeafWithPermissions { node } => write!(f, "LeafWithPermissions({node})"),
            TopologyIssue::UnreachableNode { node } => write!(f, "UnreachableNode({node})"),
            TopologyIssue::Cycle { nodes } => write!(f, "Cycle({})", nodes.join(",")),
        }
    }
}

/// Outgoing reachability edges of a node: its permissions plus an agent's model node.
fn out_edges(spec: &OxySpec) -> impl Iterator<Item = String> + '_ {
    spec.permitted_callees.iter().cloned().chain(spec.model_node())
}

/// Pure topology check over a spec set. Output is sorted by node name, so it does
/// not depend on registration order.
pub fn validate_specs(specs: &[OxySpec], entrypoints: &BTreeSet<String>) -> Vec<TopologyIssue> {
    let by_name: HashMap<&str, &OxySpec> = specs.iter().map(|s| (s.name.as_str(), s)).collect();
    let mut issues = Vec::new();

    for spec in specs {
        if spec.kind.is_leaf() && !spec.permitted_callees.is_empty() {
            issues.push(TopologyIssue::LeafWithPermissions { node: spec.name.clone() });
        }
        for callee in &spec.permitted_callees {
            if !by_name.contains_key(callee.as_str()) {
                issues.push(TopologyIssue::DanglingPermission {
                    node: spec.name.clone(),
                    callee: callee.clone(),
                });
            }
        }
        if let Some(model) = spec.model_node() {
            match by_name.get(model.as_str()) {
                Some(target) if target.kind == NodeKind::Llm => {}
                _ => issues.push(TopologyIssue::DanglingModel { node: spec.name.clone(), model }),
            }
        }
    }

    let mut reached: BTreeSet<&str> = BTreeSet::new();
    let mut queue: VecDeque<&str> = entrypoints
        .iter()
        .filter(|e| by_name.contains_key(e.as_str()))
        .map(String::as_str)
        .collect();
    while let Some(name) = queue.pop_front() {
        if !reached.insert(name) {
            continue;
        }
        for next in out_edges(by_name[name]) {
            if let Some((key, _)) = by_name.get_key_value(next.as_str()) {
                queue.push_back(key);
            }
        }
    }
    for spec in specs {
        if !reached.contains(spec.name.as_str()) {
            issues.push(TopologyIssue::UnreachableNode { node: spec.name.clone() });
        }
    }

    issues.extend(delegation_cycles(specs));
    issues.sort_by(|a, b| a.node().cmp(b.node()).then_with(|| a.cmp(b)));
    issues.dedup();
    issues
}

fn delegation_cycles(specs: &[OxySpec]) -> Vec<TopologyIssue> {
    let mut sorted: Vec<&OxySpec> = specs.iter().filter(|s| !s.kind.is_leaf()).collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut graph = DiGraph::<&str, ()>::new();
    let index: HashMap<&str, _> = sorted.iter().map(|s| (s.name.as_str(), graph.add_node(s.name.as_str()))).collect();
    for spec in &sorted {
        for callee in &spec.permitted_callees {
            if let Some(&to) = index.get(callee.as_str()) {
                graph.add_edge(index[spec.name.as_str()], to, ());
            }
        }
    }
    petgraph::algo::tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1 || graph.contains_edge(scc[0], scc[0]))
        .map(|scc| {
            let mut nodes: Vec<String> = scc.iter().map(|&i| graph[i].to_owned()).collect();
            nodes.sort();
            TopologyIssue::Cycle { nodes }
        })
        .collect()
}

/// Node and permission-edge projection used by topology views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyView {
    pub entrypoints: Vec<String>,
    pub nodes: Vec<TopologyNode>,
    pub edges: Vec<TopologyEdge>,
    pub issues: Vec<TopologyIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyNode {
    pub name: String,
    pub kind: NodeKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TopologyEdge {
    pub from: String,
    pub to: String,
    /// `permission` for delegation edges, `model` for an agent's model node.
    pub relation: String,
}

pub fn topology_view(specs: &[OxySpec], entrypoints: &BTreeSet<String>) -> TopologyView {
    let mut nodes: Vec<TopologyNode> = specs
        .iter()
        .map(|s| TopologyNode { name: s.name.clone(), kind: s.kind, description: s.description.clone() })
        .collect();
    nodes.sort_by(|a, b| a.name.cmp(&b.name));
    let mut edges = Vec::new();
    for spec in specs {
        for callee in &spec.permitted_callees {
            edges.push(TopologyEdge { from: spec.name.clone(), to: callee.clone(), relation: "permission".into() });
        }
        if let Some(model) = spec.model_node() {
            edges.push(TopologyEdge { from: spec.name.clone(), to: model, relation: "model".into() });
        }
    }
    edges.sort();
    TopologyView {
        entrypoints: entrypoints.iter().cloned().collect(),
        nodes,
        edges,
        issues: validate_specs(specs, entrypoints),
    }
}

impl Registry {
    pub fn topology(&self) -> TopologyView {
        let inner = self.inner.read();
        let specs: Vec<OxySpec> = inner.order.iter().map(|n| OxySpec::clone(&inner.specs[n])).collect();
        topology_view(&specs, &inner.entrypoints)
    }
}

/// Convenience for building config maps in tests and fixtures.
pub fn config_map(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map,
        _ => Map::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_registry() -> Registry {
        let reg = Registry::new();
        reg.register(OxySpec::agent("master", "llm", "m").with_callees(["file_agent"])).unwrap();
        reg.register(OxySpec::agent("file_agent", "llm", "f").with_callees(["read_file"])).unwrap();
        reg.register(OxySpec::tool("read_file", "echo")).unwrap();
        reg.register(OxySpec::llm("llm", "scripted")).unwrap();
        reg.set_entrypoint("master");
        reg
    }

    #[test]
    fn round_trip_and_conflict() {
        let reg = Registry::new();
        let spec = OxySpec::tool("time_tool", "echo");
        reg.register(spec.clone()).unwrap();
        assert_eq!(*reg.resolve("time_tool").unwrap(), spec);
        let again = OxySpec::tool("time_tool", "other");
        assert!(matches!(reg.register(again), Err(RegistryError::NameConflict(_))));
        assert_eq!(reg.resolve("time_tool").unwrap().tool_config().unwrap().handler, "echo");
        assert!(matches!(reg.resolve("missing"), Err(RegistryError::NodeNotFound(_))));
    }

    #[test]
    fn dangling_permission_is_deferred() {
        let reg = Registry::new();
        reg.register(OxySpec::agent("a", "llm", "").with_callees(["ghost"])).unwrap();
        reg.register(OxySpec::llm("llm", "b")).unwrap();
        reg.set_entrypoint("a");
        assert_eq!(
            reg.validate_topology(),
            vec![TopologyIssue::DanglingPermission { node: "a".into(), callee: "ghost".into() }]
        );
    }

    #[test]
    fn clean_and_unreachable() {
        let reg = file_registry();
        assert!(reg.validate_topology().is_empty());
        reg.register(OxySpec::tool("orphan_tool", "echo")).unwrap();
        assert_eq!(
            reg.validate_topology(),
            vec![TopologyIssue::UnreachableNode { node: "orphan_tool".into() }]
        );
    }

    #[test]
    fn leaf_with_permissions_reported_from_raw_specs() {
        let mut bad = OxySpec::tool("t", "echo");
        bad.permitted_callees.push("x".into());
        let issues = validate_specs(&[bad], &BTreeSet::new());
        assert!(issues.contains(&TopologyIssue::LeafWithPermissions { node: "t".into() }));
    }

    #[test]
    fn cycles_are_info() {
        let reg = Registry::new();
        reg.register(OxySpec::agent("a", "llm", "").with_callees(["b"])).unwrap();
        reg.register(OxySpec::agent("b", "llm", "").with_callees(["a"])).unwrap();
        reg.register(OxySpec::llm("llm", "x")).unwrap();
        reg.set_entrypoint("a");
        let issues = reg.validate_topology();
        assert_eq!(issues, vec![TopologyIssue::Cycle { nodes: vec!["a".into(), "b".into()] }]);
        assert_eq!(issues[0].severity(), Severity::Info);
    }

    #[test]
    fn update_config_swaps_spec() {
        let reg = file_registry();
        reg.update_config("master", "system_prompt", Value::String("v2".into())).unwrap();
        assert_eq!(reg.resolve("master").unwrap().agent_config().unwrap().system_prompt, "v2");
    }
}
