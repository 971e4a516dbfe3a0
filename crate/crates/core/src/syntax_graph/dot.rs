use std::fmt::Write as _;

use crate::syntax_graph::{SentenceGraph, TokenAlignment, TrajectorySubgraph};

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: entity nodes red, other subgraph nodes orange, star edges dashed.
pub fn to_dot(
    name: &str,
    graph: &SentenceGraph,
    alignment: &TokenAlignment,
    subgraph: &TrajectorySubgraph,
) -> String {
    let entity: std::collections::BTreeSet<usize> =
        graph.entity_nodes.iter().flatten().copied().collect();
    let mut out = String::new();
    let _ = writeln!(out, "graph \"{}\" {{", escape(name));
    let _ = writeln!(out, "  node [shape=box, style=filled, fillcolor=white];");
    for (i, tok) in alignment.tokens.iter().enumerate() {
        let fill = if entity.contains(&i) {
            "red"
        } else if subgraph.nodes.contains(&i) {
            "orange"
        } else {
            "white"
        };
        let _ = writeln!(out, "  n{i} [label=\"{}\", fillcolor={fill}];", escape(tok));
    }
    for &(a, b) in &graph.dep_edges {
        let _ = writeln!(out, "  n{a} -- n{b};");
    }
    for &(a, b) in &graph.subword_edges {
        let _ = writeln!(out, "  n{a} -- n{b} [style=dashed];");
    }
    out.push_str("}\n");
    out
}
