//! Annotated samples: schema, validation, loading, span alignment and fold planning.
//!
//! Entity spans are character offsets (Unicode scalar values, end exclusive) into the
//! sentence. Dependency parses are ingested from an external parser, either embedded in
//! the JSONL record or supplied as a CoNLL-U sidecar keyed by sample id.

mod align;
mod conllu;
mod folds;
mod jsonl;

pub use align::{align_spans_to_words, align_view, locate_span, EntityWords};
pub use conllu::{parse_conllu, write_conllu, ConlluSentence};
pub use folds::{make_folds, FoldPlan};
pub use jsonl::{
    load_samples, read_jsonl_records, sample_to_record, samples_to_jsonl, LoadReport, Rejection,
    SampleFormat, SampleRecord, SpanRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::ActivityType;

/// A character-offset span of the sentence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub text: String,
    #[serde(rename = "start")]
    pub char_start: usize,
    #[serde(rename = "end")]
    pub char_end: usize,
}

impl EntitySpan {
    pub fn new(text: impl Into<String>, char_start: usize, char_end: usize) -> Self {
        Self {
            text: text.into(),
            char_start,
            char_end,
        }
    }

    fn overlaps(&self, other: &EntitySpan) -> bool {
        self.char_start < other.char_end && other.char_start < self.char_end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityRole {
    Person,
    Time,
    Location,
}

impl EntityRole {
    pub const ALL: [EntityRole; 3] = [EntityRole::Person, EntityRole::Time, EntityRole::Location];

    pub fn name(self) -> &'static str {
        match self {
            EntityRole::Person => "person",
            EntityRole::Time => "time",
            EntityRole::Location => "location",
        }
    }
}

/// (person, time, location) spans of one trajectory activity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub person: EntitySpan,
    pub time: EntitySpan,
    pub location: EntitySpan,
}

impl Triple {
    pub fn get(&self, role: EntityRole) -> &EntitySpan {
        match role {
            EntityRole::Person => &self.person,
            EntityRole::Time => &self.time,
            EntityRole::Location => &self.location,
        }
    }

    pub fn spans(&self) -> [(EntityRole, &EntitySpan); 3] {
        [
            (EntityRole::Person, &self.person),
            (EntityRole::Time, &self.time),
            (EntityRole::Location, &self.location),
        ]
    }
}

/// One word of a dependency parse.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepToken {
    pub index: usize,
    pub form: String,
    pub pos: String,
    /// Word index of the syntactic head; equal to `index` for the root.
    pub head: usize,
    pub deprel: String,
    #[serde(rename = "start")]
    pub char_start: usize,
    #[serde(rename = "end")]
    pub char_end: usize,
}

impl DepToken {
    pub fn is_root(&self) -> bool {
        self.head == self.index
    }
}

/// A sentence with its triple and parse. Both the original and the refined text use it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceView {
    pub sentence: String,
    pub triple: Triple,
    pub parse: Vec<DepToken>,
}

/// The LLM-rewritten variant of a sample, with entities re-located by verbatim search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinedView {
    pub view: SentenceView,
    /// Set when some entity text occurs more than once in the refined sentence.
    pub ambiguous: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetVariant {
    #[default]
    Regular,
    LlmRefined,
}

/// One classification instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrajectorySample {
    pub id: String,
    pub original: SentenceView,
    pub refined: Option<RefinedView>,
    pub label: Option<ActivityType>,
    pub person_resolved: Option<String>,
}

impl TrajectorySample {
    pub fn sentence(&self) -> &str {
        &self.original.sentence
    }

    pub fn triple(&self) -> &Triple {
        &self.original.triple
    }

    /// The view graph construction runs on for the given dataset variant.
    ///
    /// Samples without a refinement fall back to the original view.
    pub fn active(&self, variant: DatasetVariant) -> &SentenceView {
        match (variant, &self.refined) {
            (DatasetVariant::LlmRefined, Some(r)) => &r.view,
            _ => &self.original,
        }
    }
}

pub(crate) fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(b, _)| b).chain(std::iter::once(s.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&s[b_start..b_end])
}

/// Check span text, ordering and pairwise disjointness of a triple.
pub fn validate_triple(sentence: &str, triple: &Triple) -> Result<()> {
    for (role, span) in triple.spans() {
        if span.char_start >= span.char_end {
            return Err(Error::validation(format!(
                "span mismatch: {} span [{}, {}) is empty or reversed",
                role.name(),
                span.char_start,
                span.char_end
            )));
        }
        match char_slice(sentence, span.char_start, span.char_end) {
            Some(text) if text == span.text => {}
            found => {
                return Err(Error::validation(format!(
                    "span mismatch: {} text {:?} does not match sentence substring {:?}",
                    role.name(),
                    span.text,
                    found.unwrap_or("<out of range>")
                )))
            }
        }
    }
    let spans = triple.spans();
    for i in 0..3 {
        for j in i + 1..3 {
            if spans[i].1.overlaps(spans[j].1) {
                return Err(Error::validation(format!(
                    "overlapping entities: {} and {}",
                    spans[i].0.name(),
                    spans[j].0.name()
                )));
            }
        }
    }
    Ok(())
}

/// Check a parse against its sentence: head range, a single root, monotone offsets
/// and surface forms.
pub fn validate_parse(sentence: &str, parse: &[DepToken]) -> Result<()> {
    if parse.is_empty() {
        return Err(Error::validation("parse/sentence token mismatch: empty parse"));
    }
    let mut roots = 0;
    let mut cursor = 0;
    for (i, tok) in parse.iter().enumerate() {
        if tok.index != i {
            return Err(Error::validation(format!(
                "parse/sentence token mismatch: token {} carries index {}",
                i, tok.index
            )));
        }
        if tok.head >= parse.len() {
            return Err(Error::validation(format!(
                "parse/sentence token mismatch: head {} of token {} out of range",
                tok.head, i
            )));
        }
        if tok.is_root() {
            roots += 1;
        }
        if tok.char_start < cursor || tok.char_start >= tok.char_end {
            return Err(Error::validation(format!(
                "parse/sentence token mismatch: token {} offsets [{}, {}) overlap or are not monotone",
                i, tok.char_start, tok.char_end
            )));
        }
        if char_slice(sentence, tok.char_start, tok.char_end) != Some(tok.form.as_str()) {
            return Err(Error::validation(format!(
                "parse/sentence token mismatch: token {} form {:?} not at [{}, {})",
                i, tok.form, tok.char_start, tok.char_end
            )));
        }
        cursor = tok.char_end;
    }
    if roots != 1 {
        return Err(Error::validation(format!(
            "parse/sentence token mismatch: expected exactly one root, found {roots}"
        )));
    }
    Ok(())
}

/// Full view validation: triple, parse, and whole-token coverage of every entity.
pub fn validate_view(view: &SentenceView) -> Result<()> {
    validate_triple(&view.sentence, &view.triple)?;
    validate_parse(&view.sentence, &view.parse)?;
    align::align_view(view).map(|_| ())
}

/// Build a view from whitespace-free word forms in sentence order.
///
/// `rows` are `(form, pos, head, deprel)` with 1-based heads and 0 for the root, as in
/// CoNLL-U. Each triple text is located at its first verbatim occurrence.
pub fn build_view(
    sentence: &str,
    rows: &[(&str, &str, usize, &str)],
    triple: (&str, &str, &str),
) -> Result<SentenceView> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut cursor = 0;
    let mut parse = Vec::with_capacity(rows.len());
    for (i, &(form, pos, head, deprel)) in rows.iter().enumerate() {
        while cursor < chars.len() && chars[cursor].is_whitespace() {
            cursor += 1;
        }
        let len = form.chars().count();
        if char_slice(sentence, cursor, cursor + len) != Some(form) {
            return Err(Error::validation(format!(
                "parse/sentence token mismatch: {form:?} not at character {cursor}"
            )));
        }
        parse.push(DepToken {
            index: i,
            form: form.to_string(),
            pos: pos.to_string(),
            head: if head == 0 { i } else { head - 1 },
            deprel: deprel.to_string(),
            char_start: cursor,
            char_end: cursor + len,
        });
        cursor += len;
    }
    let locate = |text: &str| {
        locate_span(sentence, text)
            .map(|(s, _)| s)
            .ok_or_else(|| Error::validation(format!("span mismatch: {text:?} not in sentence")))
    };
    let view = SentenceView {
        sentence: sentence.to_string(),
        triple: Triple {
            person: locate(triple.0)?,
            time: locate(triple.1)?,
            location: locate(triple.2)?,
        },
        parse,
    };
    validate_view(&view)?;
    Ok(view)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_slice_handles_multibyte() {
        let s = "Zürich in 1905";
        assert_eq!(char_slice(s, 0, 6), Some("Zürich"));
        assert_eq!(char_slice(s, 10, 14), Some("1905"));
        assert_eq!(char_slice(s, 10, 15), None);
        assert_eq!(char_slice(s, 3, 3), Some(""));
    }

    #[test]
    fn overlapping_triple_rejected() {
        let sentence = "He lived in New York in 1905";
        let triple = Triple {
            person: EntitySpan::new("He", 0, 2),
            time: EntitySpan::new("1905", 24, 28),
            location: EntitySpan::new("New York", 12, 20),
        };
        validate_triple(sentence, &triple).unwrap();
        let bad = Triple {
            location: EntitySpan::new("He lived", 0, 8),
            ..triple
        };
        let err = validate_triple(sentence, &bad).unwrap_err().to_string();
        assert!(err.contains("overlapping"), "{err}");
    }
}
