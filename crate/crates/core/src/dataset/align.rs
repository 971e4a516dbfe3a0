use crate::dataset::{EntityRole, EntitySpan, SentenceView, TrajectorySample};
use crate::error::{Error, Result};

/// Word indices covering each entity of a triple.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityWords {
    pub person: Vec<usize>,
    pub time: Vec<usize>,
    pub location: Vec<usize>,
}

impl EntityWords {
    pub fn get(&self, role: EntityRole) -> &[usize] {
        match role {
            EntityRole::Person => &self.person,
            EntityRole::Time => &self.time,
            EntityRole::Location => &self.location,
        }
    }
}

/// Word indices of the sample's original view covering each entity span.
pub fn align_spans_to_words(sample: &TrajectorySample) -> Result<EntityWords> {
    align_view(&sample.original)
}

pub fn align_view(view: &SentenceView) -> Result<EntityWords> {
    let cover = |role: EntityRole| -> Result<Vec<usize>> {
        let span = view.triple.get(role);
        let words: Vec<usize> = view
            .parse
            .iter()
            .filter(|t| t.char_start < span.char_end && span.char_start < t.char_end)
            .map(|t| t.index)
            .collect();
        if words.is_empty() {
            return Err(Error::Alignment(format!(
                "{} span {:?} covers no parse token",
                role.name(),
                span.text
            )));
        }
        for &w in &words {
            let t = &view.parse[w];
            if t.char_start < span.char_start || t.char_end > span.char_end {
                return Err(Error::Alignment(format!(
                    "{} span {:?} [{}, {}) cuts through token {:?} [{}, {})",
                    role.name(),
                    span.text,
                    span.char_start,
                    span.char_end,
                    t.form,
                    t.char_start,
                    t.char_end
                )));
            }
        }
        Ok(words)
    };
    Ok(EntityWords {
        person: cover(EntityRole::Person)?,
        time: cover(EntityRole::Time)?,
        location: cover(EntityRole::Location)?,
    })
}

/// Find `text` verbatim in `sentence`. Returns the first occurrence and whether
/// there are more.
pub fn locate_span(sentence: &str, text: &str) -> Option<(EntitySpan, bool)> {
    if text.is_empty() {
        return None;
    }
    let byte = sentence.find(text)?;
    let start = sentence[..byte].chars().count();
    let end = start + text.chars().count();
    let ambiguous = sentence[byte + 1..].contains(text);
    Some((EntitySpan::new(text, start, end), ambiguous))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DepToken, Triple};

    fn tokens(sentence: &str) -> Vec<DepToken> {
        let mut out = Vec::new();
        let mut pos = 0;
        for (i, w) in sentence.split(' ').enumerate() {
            let len = w.chars().count();
            out.push(DepToken {
                index: i,
                form: w.to_string(),
                pos: "X".into(),
                head: 0,
                deprel: "dep".into(),
                char_start: pos,
                char_end: pos + len,
            });
            pos += len + 1;
        }
        out
    }

    fn kneller_view() -> SentenceView {
        let sentence = "From 1946 to 1948 he was flute professor at Kneller Hall .".to_string();
        SentenceView {
            parse: tokens(&sentence),
            triple: Triple {
                person: EntitySpan::new("he", 18, 20),
                time: EntitySpan::new("From 1946 to 1948", 0, 17),
                location: EntitySpan::new("Kneller Hall", 44, 56),
            },
            sentence,
        }
    }

    #[test]
    fn kneller_hall_alignment() {
        let view = kneller_view();
        crate::dataset::validate_triple(&view.sentence, &view.triple).unwrap();
        let words = align_view(&view).unwrap();
        assert_eq!(words.time, vec![0, 1, 2, 3]);
        assert_eq!(words.person, vec![4]);
        assert_eq!(words.location, vec![9, 10]);
    }

    #[test]
    fn partial_token_cover_is_an_error() {
        let mut view = kneller_view();
        view.triple.location = EntitySpan::new("Kneller Ha", 44, 54);
        let err = align_view(&view).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn locate_reports_ambiguity() {
        let (span, ambiguous) = locate_span("he said he left", "he").unwrap();
        assert_eq!((span.char_start, span.char_end), (0, 2));
        assert!(ambiguous);
        let (span, ambiguous) = locate_span("In Zürich in 1905", "1905").unwrap();
        assert_eq!(span.char_start, 13);
        assert!(!ambiguous);
        assert!(locate_span("abc", "x").is_none());
    }
}
