//! Small generated corpora with hand-built parses, used for learnability checks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{build_view, TrajectorySample};
use crate::taxonomy::ActivityType;

const PERSONS: [&str; 12] = [
    "He", "She", "Smith", "Jones", "Brown", "Taylor", "Wilson", "Clarke", "Hughes", "Morgan", "Turner", "Baker",
];
const PLACES: [&str; 12] = [
    "Paris", "London", "Vienna", "Adelaide", "Boston", "Berlin", "Madrid", "Dublin", "Geneva", "Lisbon", "Prague",
    "Oslo",
];

fn year<R: Rng>(rng: &mut R) -> String {
    rng.random_range(1800..1950).to_string()
}

fn sample(id: String, sentence: &str, rows: &[(&str, &str, usize, &str)], triple: (&str, &str, &str), label: ActivityType) -> TrajectorySample {
    let original = build_view(sentence, rows, triple).expect("generated parse is consistent");
    TrajectorySample {
        id,
        original,
        refined: None,
        label: Some(label),
        person_resolved: None,
    }
}

/// Three classes whose verb decides the label:
/// `<person> <verb> in <place> in <year> .` or `In <year> , <person> <verb> at <place> .`
pub fn templated_corpus(per_class: usize, seed: u64) -> Vec<TrajectorySample> {
    let classes: [(ActivityType, [&str; 2]); 3] = [
        (ActivityType::Birth, ["born", "baptised"]),
        (ActivityType::Education, ["studied", "graduated"]),
        (ActivityType::Career, ["worked", "lectured"]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..per_class {
        for (label, verbs) in &classes {
            let p = *PERSONS.choose(&mut rng).expect("non-empty");
            let v = *verbs.choose(&mut rng).expect("non-empty");
            let l = *PLACES.choose(&mut rng).expect("non-empty");
            let y = year(&mut rng);
            let id = format!("tmpl-{}-{i}", label.id());
            if rng.random_bool(0.5) {
                let s = format!("{p} {v} in {l} in {y} .");
                let rows = [
                    (p, "PROPN", 2, "nsubj"),
                    (v, "VERB", 0, "root"),
                    ("in", "ADP", 4, "case"),
                    (l, "PROPN", 2, "obl"),
                    ("in", "ADP", 6, "case"),
                    (y.as_str(), "NUM", 2, "obl"),
                    (".", "PUNCT", 2, "punct"),
                ];
                out.push(sample(id, &s, &rows, (p, &y, l), *label));
            } else {
                let s = format!("In {y} , {p} {v} at {l} .");
                let rows = [
                    ("In", "ADP", 2, "case"),
                    (y.as_str(), "NUM", 5, "obl"),
                    (",", "PUNCT", 5, "punct"),
                    (p, "PROPN", 5, "nsubj"),
                    (v, "VERB", 0, "root"),
                    ("at", "ADP", 7, "case"),
                    (l, "PROPN", 5, "obl"),
                    (".", "PUNCT", 5, "punct"),
                ];
                out.push(sample(id, &s, &rows, (p, &y, l), *label));
            }
        }
    }
    out
}

/// Three classes sharing the neutral verb "went". The class cue noun governs the location
/// and so lies on the location-to-verb path; a cue from another class sits off every path
/// in an identical local context:
/// `<person> went to the <cue> in <place> in <year> with the <distractor> in town .`
pub fn distractor_corpus(per_class: usize, seed: u64) -> Vec<TrajectorySample> {
    let classes: [(ActivityType, [&str; 3]); 3] = [
        (ActivityType::Education, ["college", "academy", "seminary"]),
        (ActivityType::Career, ["office", "firm", "bank"]),
        (ActivityType::Military, ["regiment", "garrison", "barracks"]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..per_class {
        for (c, (label, cues)) in classes.iter().enumerate() {
            let other = (c + rng.random_range(1..classes.len())) % classes.len();
            let p = *PERSONS.choose(&mut rng).expect("non-empty");
            let cue = *cues.choose(&mut rng).expect("non-empty");
            let dist = *classes[other].1.choose(&mut rng).expect("non-empty");
            let l = *PLACES.choose(&mut rng).expect("non-empty");
            let y = year(&mut rng);
            let s = format!("{p} went to the {cue} in {l} in {y} with the {dist} in town .");
            let rows = [
                (p, "PROPN", 2, "nsubj"),
                ("went", "VERB", 0, "root"),
                ("to", "ADP", 5, "case"),
                ("the", "DET", 5, "det"),
                (cue, "NOUN", 2, "obl"),
                ("in", "ADP", 7, "case"),
                (l, "PROPN", 5, "nmod"),
                ("in", "ADP", 9, "case"),
                (y.as_str(), "NUM", 2, "obl"),
                ("with", "ADP", 12, "case"),
                ("the", "DET", 12, "det"),
                (dist, "NOUN", 2, "obl"),
                ("in", "ADP", 14, "case"),
                ("town", "NOUN", 12, "nmod"),
                (".", "PUNCT", 2, "punct"),
            ];
            out.push(sample(format!("dist-{}-{i}", label.id()), &s, &rows, (p, &y, l), *label));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::validate_view;

    #[test]
    fn corpora_are_valid_and_balanced() {
        for corpus in [templated_corpus(5, 1), distractor_corpus(5, 1)] {
            assert_eq!(corpus.len(), 15);
            for s in &corpus {
                validate_view(&s.original).unwrap();
            }
            let ids: std::collections::HashSet<_> = corpus.iter().map(|s| &s.id).collect();
            assert_eq!(ids.len(), 15);
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(distractor_corpus(3, 7), distractor_corpus(3, 7));
        assert_ne!(distractor_corpus(3, 7), distractor_corpus(3, 8));
    }
}
