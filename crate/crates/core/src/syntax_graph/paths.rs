use std::collections::BTreeSet;

use crate::dataset::EntityRole;
use crate::syntax_graph::{bfs_distances, SentenceGraph};

/// Union of all minimal entity-to-nearest-verb paths, with its induced edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrajectorySubgraph {
    pub nodes: BTreeSet<usize>,
    pub edges: BTreeSet<(usize, usize)>,
    /// Per entity (person, time, location): its own nodes plus every node on one of its
    /// minimal paths to a nearest verb.
    pub path_nodes: [BTreeSet<usize>; 3],
    /// Distance from each entity to its nearest verb; `None` when unreachable.
    pub verb_distance: [Option<usize>; 3],
    /// Set when there is no verb or some entity cannot reach one; `nodes` then holds
    /// only the entity nodes.
    pub fallback: bool,
}

impl TrajectorySubgraph {
    /// Subgraph made of the entity nodes alone.
    pub fn entities_only(graph: &SentenceGraph, fallback: bool) -> Self {
        let path_nodes = EntityRole::ALL.map(|r| graph.entity(r).iter().copied().collect());
        let mut sub = TrajectorySubgraph {
            nodes: BTreeSet::new(),
            edges: BTreeSet::new(),
            path_nodes,
            verb_distance: [None; 3],
            fallback,
        };
        sub.finish(graph);
        sub
    }

    fn finish(&mut self, graph: &SentenceGraph) {
        self.nodes = self.path_nodes.iter().flatten().copied().collect();
        self.edges = graph
            .edges()
            .filter(|(a, b)| self.nodes.contains(a) && self.nodes.contains(b))
            .collect();
    }
}

/// For each entity, collect the nodes of every shortest path to its nearest verb(s).
///
/// A node `v` lies on a minimal path from entity set `E` to the verb set iff
/// `d(E, v) + d(v, Verbs) == d(E, Verbs)`, so two multi-source BFS passes per entity
/// recover the union of all such paths, ties included.
pub fn entity_verb_paths(graph: &SentenceGraph) -> TrajectorySubgraph {
    if graph.verb_nodes.is_empty() {
        return TrajectorySubgraph::entities_only(graph, true);
    }
    let from_verbs = bfs_distances(graph, &graph.verb_nodes);
    let mut path_nodes: [BTreeSet<usize>; 3] = Default::default();
    let mut verb_distance = [None; 3];
    for role in EntityRole::ALL {
        let entity = graph.entity(role);
        let nearest = entity.iter().filter_map(|&n| from_verbs[n]).min();
        let Some(best) = nearest else {
            return TrajectorySubgraph::entities_only(graph, true);
        };
        let from_entity = bfs_distances(graph, entity);
        let nodes = &mut path_nodes[role as usize];
        nodes.extend(entity.iter().copied());
        for v in 0..graph.node_count {
            if let (Some(a), Some(b)) = (from_entity[v], from_verbs[v]) {
                if a + b == best {
                    nodes.insert(v);
                }
            }
        }
        verb_distance[role as usize] = Some(best);
    }
    let mut sub = TrajectorySubgraph {
        nodes: BTreeSet::new(),
        edges: BTreeSet::new(),
        path_nodes,
        verb_distance,
        fallback: false,
    };
    sub.finish(graph);
    sub
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax_graph::testutil::view_from_rows;
    use crate::syntax_graph::{build_graph, tokenize_with_markers, VerbTags, WordPiece};
    use std::collections::BTreeSet;

    fn graph_of(
        sentence: &str,
        rows: &[(&str, &str, usize, &str)],
        triple: (&str, &str, &str),
    ) -> (SentenceGraph, crate::syntax_graph::TokenAlignment) {
        let view = view_from_rows(sentence, rows, triple);
        let wp = WordPiece::from_corpus(view.parse.iter().map(|t| t.form.as_str()), false);
        let a = tokenize_with_markers(&view, &wp, 64).unwrap();
        (build_graph(&view, &a, &VerbTags::default()), a)
    }

    fn words(a: &crate::syntax_graph::TokenAlignment, nodes: &BTreeSet<usize>) -> BTreeSet<String> {
        nodes.iter().map(|&n| a.tokens[n].clone()).collect()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn moved_to_paris_paths() {
        let (g, a) = graph_of(
            "He moved to Paris in 1905 .",
            &[
                ("He", "PRON", 2, "nsubj"),
                ("moved", "VERB", 0, "root"),
                ("to", "ADP", 4, "case"),
                ("Paris", "PROPN", 2, "obl"),
                ("in", "ADP", 6, "case"),
                ("1905", "NUM", 2, "obl"),
                (".", "PUNCT", 2, "punct"),
            ],
            ("He", "1905", "Paris"),
        );
        let sub = entity_verb_paths(&g);
        assert!(!sub.fallback);
        assert_eq!(words(&a, &sub.path_nodes[0]), set(&["He", "moved"]));
        assert_eq!(words(&a, &sub.path_nodes[1]), set(&["1905", "moved"]));
        assert_eq!(words(&a, &sub.path_nodes[2]), set(&["Paris", "moved"]));
        assert_eq!(words(&a, &sub.nodes), set(&["He", "moved", "Paris", "1905"]));
        assert_eq!(sub.verb_distance, [Some(1); 3]);
        assert_eq!(sub.edges.len(), 3);
    }

    #[test]
    fn no_verb_falls_back_to_entities() {
        let (g, a) = graph_of(
            "He , Adelaide , 1905",
            &[
                ("He", "PRON", 0, "root"),
                (",", "PUNCT", 3, "punct"),
                ("Adelaide", "PROPN", 1, "appos"),
                (",", "PUNCT", 5, "punct"),
                ("1905", "NUM", 1, "appos"),
            ],
            ("He", "1905", "Adelaide"),
        );
        let sub = entity_verb_paths(&g);
        assert!(sub.fallback);
        assert_eq!(words(&a, &sub.nodes), set(&["He", "Adelaide", "1905"]));
    }

    #[test]
    fn equidistant_verbs_both_contribute() {
        // "He" hangs off the root noun; both verbs sit two hops away.
        let (g, a) = graph_of(
            "He studied and worked in Vienna in 1910",
            &[
                ("He", "PRON", 2, "nsubj"),
                ("studied", "VERB", 0, "root"),
                ("and", "CCONJ", 4, "cc"),
                ("worked", "VERB", 2, "conj"),
                ("in", "ADP", 6, "case"),
                ("Vienna", "PROPN", 4, "obl"),
                ("in", "ADP", 8, "case"),
                ("1910", "NUM", 2, "obl"),
            ],
            ("He", "1910", "Vienna"),
        );
        let sub = entity_verb_paths(&g);
        assert_eq!(words(&a, &sub.path_nodes[0]), set(&["He", "studied"]));
        assert_eq!(words(&a, &sub.path_nodes[2]), set(&["Vienna", "worked"]));

        // A tie: the object node is one hop from each of two coordinated verbs.
        let (g, a) = graph_of(
            "In 1920 Smith bought and sold Blenheim",
            &[
                ("In", "ADP", 2, "case"),
                ("1920", "NUM", 4, "obl"),
                ("Smith", "PROPN", 4, "nsubj"),
                ("bought", "VERB", 0, "root"),
                ("and", "CCONJ", 6, "cc"),
                ("sold", "VERB", 4, "conj"),
                ("Blenheim", "PROPN", 4, "obj"),
            ],
            ("Smith", "1920", "Blenheim"),
        );
        let mut with_tie = g.dep_edges.clone();
        let blenheim = a.first_subword(6).unwrap();
        let sold = a.first_subword(5).unwrap();
        with_tie.insert((blenheim.min(sold), blenheim.max(sold)));
        let g = SentenceGraph::from_parts(
            g.node_count,
            with_tie,
            g.subword_edges.clone(),
            g.entity_nodes.clone(),
            g.verb_nodes.clone(),
        );
        let sub = entity_verb_paths(&g);
        assert_eq!(words(&a, &sub.path_nodes[2]), set(&["Blenheim", "bought", "sold"]));
    }
}
