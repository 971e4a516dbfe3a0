use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dataset::{EntityRole, SentenceView};
use crate::syntax_graph::TokenAlignment;

/// POS tags treated as verbs. Auxiliaries are excluded by default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbTags(pub Vec<String>);

impl Default for VerbTags {
    fn default() -> Self {
        VerbTags(
            ["VERB", "VB", "VBD", "VBG", "VBN", "VBP", "VBZ"]
                .into_iter()
                .map(str::to_string)
                .collect(),
        )
    }
}

impl VerbTags {
    pub fn is_verb(&self, pos: &str) -> bool {
        self.0.iter().any(|t| t == pos)
    }
}

/// Undirected graph over token positions: dependency edges between first subwords of
/// related words, plus star edges from each word's first subword to its continuation
/// pieces and from each entity's first subword to its two markers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceGraph {
    pub node_count: usize,
    /// Normalized `(min, max)` pairs.
    pub dep_edges: BTreeSet<(usize, usize)>,
    pub subword_edges: BTreeSet<(usize, usize)>,
    /// Subword positions of person, time, location.
    pub entity_nodes: [Vec<usize>; 3],
    pub verb_nodes: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

fn edge(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl SentenceGraph {
    pub fn from_parts(
        node_count: usize,
        dep_edges: BTreeSet<(usize, usize)>,
        subword_edges: BTreeSet<(usize, usize)>,
        entity_nodes: [Vec<usize>; 3],
        verb_nodes: Vec<usize>,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in dep_edges.iter().chain(subword_edges.iter()) {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        SentenceGraph {
            node_count,
            dep_edges,
            subword_edges,
            entity_nodes,
            verb_nodes,
            adjacency,
        }
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn entity(&self, role: EntityRole) -> &[usize] {
        &self.entity_nodes[role as usize]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.dep_edges.iter().chain(self.subword_edges.iter()).copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let e = edge(a, b);
        self.dep_edges.contains(&e) || self.subword_edges.contains(&e)
    }

    pub fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return true;
        }
        bfs_distances(self, &[0]).iter().all(Option::is_some)
    }

    /// Copy without the subword star edges.
    pub fn without_subword_edges(&self) -> SentenceGraph {
        SentenceGraph::from_parts(
            self.node_count,
            self.dep_edges.clone(),
            BTreeSet::new(),
            self.entity_nodes.clone(),
            self.verb_nodes.clone(),
        )
    }
}

/// Multi-source BFS hop counts; `None` for unreachable nodes.
pub fn bfs_distances(graph: &SentenceGraph, sources: &[usize]) -> Vec<Option<usize>> {
    let mut dist = vec![None; graph.node_count];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes have a distance");
        for &v in graph.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Lift the word-level parse onto the token sequence.
pub fn build_graph(view: &SentenceView, alignment: &TokenAlignment, verbs: &VerbTags) -> SentenceGraph {
    let mut dep_edges = BTreeSet::new();
    let mut subword_edges = BTreeSet::new();
    for tok in &view.parse {
        if tok.is_root() {
            continue;
        }
        if let (Some(a), Some(b)) = (
            alignment.first_subword(tok.index),
            alignment.first_subword(tok.head),
        ) {
            dep_edges.insert(edge(a, b));
        }
    }
    for subs in &alignment.word_to_subwords {
        if let Some((&first, rest)) = subs.split_first() {
            for &cont in rest {
                subword_edges.insert(edge(first, cont));
            }
        }
    }
    for &(marker, pos) in &alignment.markers {
        if let Some(anchor) = alignment.entity_anchor(marker.role()) {
            subword_edges.insert(edge(anchor, pos));
        }
    }
    let entity_nodes = EntityRole::ALL.map(|r| alignment.entity_tokens(r));
    let verb_nodes = view
        .parse
        .iter()
        .filter(|t| verbs.is_verb(&t.pos))
        .filter_map(|t| alignment.first_subword(t.index))
        .collect();
    SentenceGraph::from_parts(alignment.len(), dep_edges, subword_edges, entity_nodes, verb_nodes)
}
