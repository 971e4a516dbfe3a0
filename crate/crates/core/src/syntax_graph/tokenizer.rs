//! WordPiece subword tokenizer and marker-aware alignment of parse words to subwords.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::dataset::{align_view, EntityRole, EntityWords, SentenceView};
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CONTINUATION: &str = "##";

/// Entity-boundary marker tokens wrapped around the triple elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Marker {
    PersonOpen,
    PersonClose,
    TimeOpen,
    TimeClose,
    LocationOpen,
    LocationClose,
}

impl Marker {
    pub const ALL: [Marker; 6] = [
        Marker::PersonOpen,
        Marker::PersonClose,
        Marker::TimeOpen,
        Marker::TimeClose,
        Marker::LocationOpen,
        Marker::LocationClose,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Marker::PersonOpen => "<p>",
            Marker::PersonClose => "</p>",
            Marker::TimeOpen => "<t>",
            Marker::TimeClose => "</t>",
            Marker::LocationOpen => "<l>",
            Marker::LocationClose => "</l>",
        }
    }

    pub fn role(self) -> EntityRole {
        match self {
            Marker::PersonOpen | Marker::PersonClose => EntityRole::Person,
            Marker::TimeOpen | Marker::TimeClose => EntityRole::Time,
            Marker::LocationOpen | Marker::LocationClose => EntityRole::Location,
        }
    }

    pub fn open(role: EntityRole) -> Marker {
        match role {
            EntityRole::Person => Marker::PersonOpen,
            EntityRole::Time => Marker::TimeOpen,
            EntityRole::Location => Marker::LocationOpen,
        }
    }

    pub fn close(role: EntityRole) -> Marker {
        match role {
            EntityRole::Person => Marker::PersonClose,
            EntityRole::Time => Marker::TimeClose,
            EntityRole::Location => Marker::LocationClose,
        }
    }
}

/// Splits one word into subword pieces and maps pieces to ids.
pub trait SubwordTokenizer {
    /// Pieces of one pre-tokenized word, continuation pieces prefixed with `##`.
    fn split_word(&self, word: &str) -> Vec<String>;
    fn token_id(&self, token: &str) -> u32;
    fn vocab_size(&self) -> usize;
    fn pad_id(&self) -> u32;
}

/// Greedy longest-match-first WordPiece over a fixed vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordPiece {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    lowercase: bool,
    max_word_chars: usize,
}

impl WordPiece {
    /// Build from an ordered token list. `[PAD]`, `[UNK]` and the six markers are
    /// appended when absent.
    pub fn new(tokens: impl IntoIterator<Item = String>, lowercase: bool) -> Self {
        let mut wp = WordPiece {
            tokens: Vec::new(),
            ids: HashMap::new(),
            lowercase,
            max_word_chars: 100,
        };
        for t in [PAD.to_string(), UNK.to_string()].into_iter().chain(tokens) {
            wp.add_token(&t);
        }
        for m in Marker::ALL {
            wp.add_token(m.token());
        }
        wp
    }

    /// Add a token if missing; returns its id.
    pub fn add_token(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    /// Vocabulary covering `words`: every word whole, plus every character as an initial
    /// and a continuation piece so unseen words never collapse to `[UNK]`.
    pub fn from_corpus<'a>(words: impl IntoIterator<Item = &'a str>, lowercase: bool) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut chars: BTreeMap<char, ()> = BTreeMap::new();
        for w in words {
            let w = if lowercase { w.to_lowercase() } else { w.to_string() };
            for c in w.chars() {
                chars.insert(c, ());
            }
            *counts.entry(w).or_default() += 1;
        }
        let mut tokens: Vec<String> = counts.into_keys().collect();
        for &c in chars.keys() {
            tokens.push(c.to_string());
            tokens.push(format!("{CONTINUATION}{c}"));
        }
        WordPiece::new(tokens, lowercase)
    }

    /// One token per line, BERT `vocab.txt` style.
    pub fn from_vocab_file(path: &Path, lowercase: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(WordPiece::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.is_empty())
                .map(str::to_string),
            lowercase,
        ))
    }

    pub fn to_vocab_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn marker_id(&self, m: Marker) -> u32 {
        self.ids[m.token()]
    }
}

impl SubwordTokenizer for WordPiece {
    fn split_word(&self, word: &str) -> Vec<String> {
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() || chars.len() > self.max_word_chars {
            return vec![UNK.to_string()];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, CONTINUATION);
                }
                if self.ids.contains_key(&piece) {
                    found = Some(piece);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(p) => pieces.push(p),
                None => return vec![UNK.to_string()],
            }
            start = end;
        }
        pieces
    }

    fn token_id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(self.ids[UNK])
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    fn pad_id(&self) -> u32 {
        self.ids[PAD]
    }
}

/// Encoder token sequence with its mapping back to parse words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenAlignment {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    /// Word index → ordered subword positions. Empty only for words cut by truncation.
    pub word_to_subwords: Vec<Vec<usize>>,
    /// Token position → owning word; `None` for markers.
    pub token_word: Vec<Option<usize>>,
    /// Positions of the six marker tokens.
    pub markers: Vec<(Marker, usize)>,
    pub entity_words: EntityWords,
    pub truncated: bool,
}

impl TokenAlignment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn first_subword(&self, word: usize) -> Option<usize> {
        self.word_to_subwords.get(word).and_then(|s| s.first().copied())
    }

    /// All subword positions of one entity.
    pub fn entity_tokens(&self, role: EntityRole) -> Vec<usize> {
        self.entity_words
            .get(role)
            .iter()
            .flat_map(|&w| self.word_to_subwords[w].iter().copied())
            .collect()
    }

    /// First subword of the first word of an entity.
    pub fn entity_anchor(&self, role: EntityRole) -> Option<usize> {
        self.entity_words
            .get(role)
            .first()
            .and_then(|&w| self.first_subword(w))
    }

    pub fn is_marker(&self, pos: usize) -> bool {
        self.token_word.get(pos).is_some_and(|w| w.is_none())
    }

    /// Token ids right-padded to `padded_length`, plus the validity vector.
    pub fn padded_ids(&self, padded_length: usize, pad_id: u32) -> (Vec<u32>, Vec<bool>) {
        let mut ids = self.ids.clone();
        let mut valid = vec![true; ids.len()];
        ids.resize(padded_length.max(ids.len()), pad_id);
        valid.resize(ids.len(), false);
        (ids, valid)
    }
}

/// Tokenize the parse words of a view into subwords and wrap each entity in markers.
pub fn tokenize_with_markers<T: SubwordTokenizer + ?Sized>(
    view: &SentenceView,
    tokenizer: &T,
    max_len: usize,
) -> Result<TokenAlignment> {
    if view.sentence.trim().is_empty() || view.parse.is_empty() {
        return Err(Error::validation("cannot tokenize an empty sentence"));
    }
    let entity_words = align_view(view)?;
    let mut opens: HashMap<usize, Vec<EntityRole>> = HashMap::new();
    let mut closes: HashMap<usize, Vec<EntityRole>> = HashMap::new();
    for role in EntityRole::ALL {
        let words = entity_words.get(role);
        opens.entry(words[0]).or_default().push(role);
        closes.entry(*words.last().unwrap()).or_default().push(role);
    }

    let mut tokens = Vec::new();
    let mut token_word = Vec::new();
    let mut markers = Vec::new();
    let mut word_to_subwords = Vec::with_capacity(view.parse.len());
    let mut push_marker = |m: Marker, tokens: &mut Vec<String>, token_word: &mut Vec<Option<usize>>| {
        markers.push((m, tokens.len()));
        tokens.push(m.token().to_string());
        token_word.push(None);
    };
    for (w, tok) in view.parse.iter().enumerate() {
        for &role in opens.get(&w).into_iter().flatten() {
            push_marker(Marker::open(role), &mut tokens, &mut token_word);
        }
        let mut positions = Vec::new();
        for piece in tokenizer.split_word(&tok.form) {
            positions.push(tokens.len());
            tokens.push(piece);
            token_word.push(Some(w));
        }
        word_to_subwords.push(positions);
        for &role in closes.get(&w).into_iter().flatten() {
            push_marker(Marker::close(role), &mut tokens, &mut token_word);
        }
    }

    let mut truncated = false;
    if tokens.len() > max_len {
        let cut_entity = markers.iter().any(|&(_, p)| p >= max_len);
        if cut_entity {
            return Err(Error::Truncation {
                tokens: tokens.len(),
                max_len,
            });
        }
        truncated = true;
        tokens.truncate(max_len);
        token_word.truncate(max_len);
        for subs in &mut word_to_subwords {
            subs.retain(|&p| p < max_len);
        }
    }
    let ids = tokens.iter().map(|t| tokenizer.token_id(t)).collect();
    Ok(TokenAlignment {
        tokens,
        ids,
        word_to_subwords,
        token_word,
        markers,
        entity_words,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax_graph::testutil::view_from_rows;

    fn fixture_vocab() -> WordPiece {
        let text = include_str!("../../fixtures/vocab.txt");
        WordPiece::new(text.lines().map(str::to_string), true)
    }

    #[test]
    fn rebennack_splits_into_three() {
        let wp = fixture_vocab();
        let pieces = wp.split_word("Rebennack");
        assert_eq!(pieces, vec!["re", "##ben", "##nack"]);
        assert_eq!(wp.split_word("Adelaide"), vec!["adel", "##aide"]);
        assert_eq!(wp.split_word("he"), vec!["he"]);
        assert_eq!(wp.split_word("§"), vec![UNK]);
    }

    #[test]
    fn markers_wrap_entities() {
        let view = view_from_rows(
            "He was in Adelaide in 1905",
            &[
                ("He", "PRON", 2, "nsubj"),
                ("was", "AUX", 0, "root"),
                ("in", "ADP", 4, "case"),
                ("Adelaide", "PROPN", 2, "obl"),
                ("in", "ADP", 6, "case"),
                ("1905", "NUM", 2, "obl"),
            ],
            ("He", "1905", "Adelaide"),
        );
        let wp = WordPiece::from_corpus(view.parse.iter().map(|t| t.form.as_str()), false);
        let a = tokenize_with_markers(&view, &wp, 64).unwrap();
        assert_eq!(
            a.tokens,
            vec!["<p>", "He", "</p>", "was", "in", "<l>", "Adelaide", "</l>", "in", "<t>", "1905", "</t>"]
        );
        assert_eq!(a.markers.len(), 6);
        assert!(a.is_marker(0) && !a.is_marker(1));
        assert_eq!(a.word_to_subwords[3], vec![6]);
        assert!(a.ids.iter().all(|&id| id != wp.token_id(UNK)));
    }

    #[test]
    fn subword_lists_and_reconstruction() {
        let view = view_from_rows(
            "Rebennack was born in New Orleans in 1941",
            &[
                ("Rebennack", "PROPN", 3, "nsubj"),
                ("was", "AUX", 3, "aux"),
                ("born", "VERB", 0, "root"),
                ("in", "ADP", 6, "case"),
                ("New", "PROPN", 6, "compound"),
                ("Orleans", "PROPN", 3, "obl"),
                ("in", "ADP", 8, "case"),
                ("1941", "NUM", 3, "obl"),
            ],
            ("Rebennack", "1941", "New Orleans"),
        );
        let a = tokenize_with_markers(&view, &fixture_vocab(), 64).unwrap();
        assert_eq!(a.word_to_subwords[0].len(), 3);
        for subs in &a.word_to_subwords {
            assert!(!subs.is_empty());
            assert!(subs.windows(2).all(|w| w[1] == w[0] + 1));
        }
        let rebuilt: String = a
            .tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !a.is_marker(*i))
            .map(|(_, t)| t.trim_start_matches(CONTINUATION))
            .collect();
        let expected: String = view.sentence.split_whitespace().collect::<String>().to_lowercase();
        assert_eq!(rebuilt, expected);
    }

    #[test]
    fn empty_sentence_is_an_error() {
        let mut view = view_from_rows(
            "He left in 1905",
            &[("He", "PRON", 2, "nsubj"), ("left", "VERB", 0, "root"), ("in", "ADP", 2, "obl"), ("1905", "NUM", 2, "obl")],
            ("He", "1905", "in"),
        );
        view.sentence.clear();
        view.parse.clear();
        assert!(tokenize_with_markers(&view, &fixture_vocab(), 8).is_err());
    }

    #[test]
    fn truncation_never_cuts_entities() {
        let view = view_from_rows(
            "He moved to Paris in 1905 with friends and family",
            &[
                ("He", "PRON", 2, "nsubj"),
                ("moved", "VERB", 0, "root"),
                ("to", "ADP", 4, "case"),
                ("Paris", "PROPN", 2, "obl"),
                ("in", "ADP", 6, "case"),
                ("1905", "NUM", 2, "obl"),
                ("with", "ADP", 8, "case"),
                ("friends", "NOUN", 2, "obl"),
                ("and", "CCONJ", 10, "cc"),
                ("family", "NOUN", 8, "conj"),
            ],
            ("He", "1905", "Paris"),
        );
        let wp = WordPiece::from_corpus(view.parse.iter().map(|t| t.form.as_str()), true);
        let a = tokenize_with_markers(&view, &wp, 13).unwrap();
        assert!(a.truncated);
        assert_eq!(a.len(), 13);
        assert!(a.word_to_subwords[9].is_empty());
        let err = tokenize_with_markers(&view, &wp, 10).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }));
    }
}
