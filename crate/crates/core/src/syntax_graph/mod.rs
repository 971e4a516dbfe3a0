//! Sentence graphs over encoder subword tokens, entity-to-verb shortest paths, and the
//! mask vector selecting the trajectory subgraph.

mod dot;
mod graph;
mod mask;
mod paths;
mod tokenizer;

#[cfg(test)]
mod testutil;

pub use dot::to_dot;
pub use graph::{bfs_distances, build_graph, SentenceGraph, VerbTags};
pub use mask::{make_mask, MaskVector};
pub use paths::{entity_verb_paths, TrajectorySubgraph};
pub use tokenizer::{
    tokenize_with_markers, Marker, SubwordTokenizer, TokenAlignment, WordPiece, CONTINUATION,
    PAD, UNK,
};

use crate::dataset::{EntityRole, SentenceView};
use crate::error::Result;

/// Everything graph preprocessing produces for one sample view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preprocessed {
    pub alignment: TokenAlignment,
    pub graph: SentenceGraph,
    pub subgraph: TrajectorySubgraph,
}

/// Tokenize, build the graph and extract the trajectory subgraph.
pub fn preprocess<T: SubwordTokenizer + ?Sized>(
    view: &SentenceView,
    tokenizer: &T,
    max_len: usize,
    verbs: &VerbTags,
) -> Result<Preprocessed> {
    let alignment = tokenize_with_markers(view, tokenizer, max_len)?;
    let graph = build_graph(view, &alignment, verbs);
    let subgraph = entity_verb_paths(&graph);
    Ok(Preprocessed {
        alignment,
        graph,
        subgraph,
    })
}

/// Mean over the three entity pairs of the shortest graph distance between their nodes.
/// `None` if some pair is disconnected.
pub fn mean_pairwise_graph_distance(graph: &SentenceGraph) -> Option<f64> {
    let mut total = 0usize;
    for (a, b) in entity_pairs() {
        let dist = bfs_distances(graph, graph.entity(a));
        total += graph
            .entity(b)
            .iter()
            .filter_map(|&n| dist[n])
            .min()?;
    }
    Some(total as f64 / 3.0)
}

/// Mean over the three entity pairs of the distance in the marker-free token sequence,
/// taking the closest tokens of multi-token entities.
pub fn mean_pairwise_token_distance(alignment: &TokenAlignment) -> f64 {
    let mut ordinal = vec![usize::MAX; alignment.len()];
    let mut next = 0;
    for (pos, slot) in ordinal.iter_mut().enumerate() {
        if !alignment.is_marker(pos) {
            *slot = next;
            next += 1;
        }
    }
    let ordinal = &ordinal;
    let mut total = 0usize;
    for (a, b) in entity_pairs() {
        let ta = alignment.entity_tokens(a);
        let tb = alignment.entity_tokens(b);
        total += ta
            .iter()
            .flat_map(|&x| tb.iter().map(move |&y| ordinal[x].abs_diff(ordinal[y])))
            .min()
            .unwrap_or(0);
    }
    total as f64 / 3.0
}

fn entity_pairs() -> [(EntityRole, EntityRole); 3] {
    [
        (EntityRole::Person, EntityRole::Time),
        (EntityRole::Person, EntityRole::Location),
        (EntityRole::Time, EntityRole::Location),
    ]
}
