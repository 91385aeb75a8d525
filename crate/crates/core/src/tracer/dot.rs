use std::fmt::Write;

use super::ExecutionGraph;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders the call tree as Graphviz DOT. Output is deterministic: nodes and
/// edges are sorted by call id.
pub fn export_dot(graph: &ExecutionGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "// trace {} version {}", graph.trace_id, graph.version_id);
    let _ = writeln!(out, "digraph trace {{");
    let id = |call_id: &str| {
        graph
            .node(call_id)
            .map(|n| format!("{}_{}", n.node, n.call_id))
            .unwrap_or_else(|| call_id.to_owned())
    };
    let mut nodes: Vec<_> = graph.nodes.iter().collect();
    nodes.sort_by(|a, b| a.call_id.cmp(&b.call_id));
    for n in nodes {
        let label = format!("{} [{}] {} {}ms", n.node, n.node_kind, n.status.as_str(), n.duration_ms);
        let _ = writeln!(out, "  \"{}\" [label=\"{}\"];", escape(&id(&n.call_id)), escape(&label));
    }
    let mut edges: Vec<_> = graph.edges.iter().collect();
    edges.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
    for e in edges {
        let _ = writeln!(out, "  \"{}\" -> \"{}\";", escape(&id(&e.from)), escape(&id(&e.to)));
    }
    out.push_str("}\n");
    out
}
