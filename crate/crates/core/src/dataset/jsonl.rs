use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::conllu::{parse_conllu, ConlluSentence};
use crate::dataset::{
    locate_span, validate_view, DepToken, EntitySpan, RefinedView, SentenceView,
    TrajectorySample, Triple,
};
use crate::error::{Error, Result};
use crate::taxonomy::parse_label;

/// Span as it appears in sample files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl From<&SpanRecord> for EntitySpan {
    fn from(r: &SpanRecord) -> Self {
        EntitySpan::new(r.text.clone(), r.start, r.end)
    }
}

impl From<&EntitySpan> for SpanRecord {
    fn from(s: &EntitySpan) -> Self {
        SpanRecord {
            text: s.text.clone(),
            start: s.char_start,
            end: s.char_end,
        }
    }
}

/// One JSONL line. `parse`/`refined_parse` are present in stores written by `ltc ingest`
/// and absent in upstream files that come with a CoNLL-U sidecar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub sentence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_sentence: Option<String>,
    pub person: SpanRecord,
    pub time: SpanRecord,
    pub location: SpanRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_resolved: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<Vec<DepToken>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_parse: Option<Vec<DepToken>>,
}

/// Where dependency parses come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    /// Parses embedded in each record.
    Jsonl,
    /// Parses in a CoNLL-U sidecar; refined parses carry the `.ref` id suffix.
    ConlluPair(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, detail) = match self.reason.split_once(": ") {
            Some((k, d)) => (k, d),
            None => (self.reason.as_str(), ""),
        };
        write!(f, "{kind} at line {}", self.line)?;
        if let Some(id) = &self.id {
            write!(f, " (id {id})")?;
        }
        if !detail.is_empty() {
            write!(f, ": {detail}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub samples: Vec<TrajectorySample>,
    pub rejections: Vec<Rejection>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Read raw JSONL records without validation. Blank lines are skipped.
pub fn read_jsonl_records(path: &Path) -> Result<Vec<(usize, SampleRecord)>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

/// Load and validate samples. Malformed records land in the rejection report with their
/// line numbers; only I/O and CoNLL-U syntax problems abort the load.
pub fn load_samples(path: &Path, format: &SampleFormat) -> Result<LoadReport> {
    let text = read_text(path)?;
    let sidecar = match format {
        SampleFormat::Jsonl => None,
        SampleFormat::ConlluPair(p) => Some(parse_conllu(&read_text(p)?)?),
    };
    let mut report = LoadReport::default();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.rejections.push(Rejection {
                    line: lineno,
                    id: None,
                    reason: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        if let Some(first) = seen.insert(record.id.clone(), lineno) {
            report.rejections.push(Rejection {
                line: lineno,
                id: Some(record.id.clone()),
                reason: format!("duplicate id: first seen at line {first}"),
            });
            continue;
        }
        match record_to_sample(record.clone(), sidecar.as_ref()) {
            Ok(s) => report.samples.push(s),
            Err(e) => report.rejections.push(Rejection {
                line: lineno,
                id: Some(record.id),
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

fn resolve_parse(
    id: &str,
    sentence: &str,
    embedded: Option<Vec<DepToken>>,
    sidecar: Option<&HashMap<String, ConlluSentence>>,
) -> Result<Vec<DepToken>> {
    if let Some(p) = embedded {
        return Ok(p);
    }
    let sent = sidecar
        .and_then(|m| m.get(id))
        .ok_or_else(|| Error::validation(format!("parse/sentence token mismatch: no parse for {id:?}")))?;
    sent.to_dep_tokens(sentence)
}

fn record_to_sample(
    r: SampleRecord,
    sidecar: Option<&HashMap<String, ConlluSentence>>,
) -> Result<TrajectorySample> {
    let triple = Triple {
        person: (&r.person).into(),
        time: (&r.time).into(),
        location: (&r.location).into(),
    };
    let label = r.label.as_deref().map(parse_label).transpose()?;
    let parse = resolve_parse(&r.id, &r.sentence, r.parse, sidecar)?;
    let original = SentenceView {
        sentence: r.sentence,
        triple,
        parse,
    };
    validate_view(&original)?;

    let refined = match r.refined_sentence {
        None => None,
        Some(refined_sentence) => {
            let mut ambiguous = false;
            let mut locate = |span: &EntitySpan| -> Result<EntitySpan> {
                let (found, amb) = locate_span(&refined_sentence, &span.text).ok_or_else(|| {
                    Error::validation(format!(
                        "span mismatch: entity {:?} not found in refined sentence",
                        span.text
                    ))
                })?;
                ambiguous |= amb;
                Ok(found)
            };
            let refined_triple = Triple {
                person: locate(&original.triple.person)?,
                time: locate(&original.triple.time)?,
                location: locate(&original.triple.location)?,
            };
            let ref_id = format!("{}.ref", r.id);
            let refined_parse = resolve_parse(&ref_id, &refined_sentence, r.refined_parse, sidecar)?;
            let view = SentenceView {
                sentence: refined_sentence,
                triple: refined_triple,
                parse: refined_parse,
            };
            validate_view(&view)?;
            Some(RefinedView { view, ambiguous })
        }
    };

    Ok(TrajectorySample {
        id: r.id,
        original,
        refined,
        label,
        person_resolved: r.person_resolved,
    })
}

/// Self-contained record with embedded parses.
pub fn sample_to_record(s: &TrajectorySample) -> SampleRecord {
    let t = &s.original.triple;
    SampleRecord {
        id: s.id.clone(),
        sentence: s.original.sentence.clone(),
        refined_sentence: s.refined.as_ref().map(|r| r.view.sentence.clone()),
        person: (&t.person).into(),
        time: (&t.time).into(),
        location: (&t.location).into(),
        label: s.label.map(|l| l.name().to_string()),
        person_resolved: s.person_resolved.clone(),
        parse: Some(s.original.parse.clone()),
        refined_parse: s.refined.as_ref().map(|r| r.view.parse.clone()),
    }
}

pub fn samples_to_jsonl(samples: &[TrajectorySample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&sample_to_record(s)).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::ActivityType;
    use std::io::Write;

    const FIG1: &str = "He enlisted as a staff cadet in the artillery at Adelaide in 1905 .";

    fn fig1_conllu() -> String {
        let rows = [
            ("He", "PRON", 2, "nsubj"),
            ("enlisted", "VERB", 0, "root"),
            ("as", "ADP", 6, "case"),
            ("a", "DET", 6, "det"),
            ("staff", "NOUN", 6, "compound"),
            ("cadet", "NOUN", 2, "obl"),
            ("in", "ADP", 9, "case"),
            ("the", "DET", 9, "det"),
            ("artillery", "NOUN", 6, "nmod"),
            ("at", "ADP", 11, "case"),
            ("Adelaide", "PROPN", 2, "obl"),
            ("in", "ADP", 13, "case"),
            ("1905", "NUM", 2, "obl"),
            (".", "PUNCT", 2, "punct"),
        ];
        let mut s = format!("# sent_id = fig1\n# text = {FIG1}\n");
        for (i, (form, pos, head, rel)) in rows.iter().enumerate() {
            s.push_str(&format!("{}\t{form}\t_\t{pos}\t_\t_\t{head}\t{rel}\t_\t_\n", i + 1));
        }
        s.push('\n');
        s
    }

    fn record(person: (&str, usize, usize)) -> String {
        format!(
            r#"{{"id":"fig1","sentence":"{FIG1}","person":{{"text":"{}","start":{},"end":{}}},"time":{{"text":"1905","start":61,"end":65}},"location":{{"text":"Adelaide","start":49,"end":57}},"label":"Career"}}"#,
            person.0, person.1, person.2
        )
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_figure_one_record() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write(dir.path(), "s.jsonl", &format!("{}\n", record(("He", 0, 2))));
        let parses = write(dir.path(), "p.conllu", &fig1_conllu());
        let report = load_samples(&samples, &SampleFormat::ConlluPair(parses)).unwrap();
        assert!(report.rejections.is_empty(), "{:?}", report.rejections);
        assert_eq!(report.samples.len(), 1);
        let s = &report.samples[0];
        assert_eq!(s.label, Some(ActivityType::Career));
        assert_eq!(s.original.parse.len(), 14);
    }

    #[test]
    fn span_mismatch_is_line_numbered() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\n\n{}\n", record(("He", 0, 2)), record(("She", 0, 3)).replace("fig1", "fig1b"));
        let samples = write(dir.path(), "s.jsonl", &body);
        let parses = write(
            dir.path(),
            "p.conllu",
            &(fig1_conllu() + &fig1_conllu().replace("sent_id = fig1", "sent_id = fig1b")),
        );
        let report = load_samples(&samples, &SampleFormat::ConlluPair(parses)).unwrap();
        assert_eq!(report.samples.len(), 1);
        assert_eq!(report.rejections.len(), 1);
        let msg = report.rejections[0].to_string();
        assert!(msg.starts_with("span mismatch at line 3"), "{msg}");
    }

    #[test]
    fn empty_file_is_vacuous() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write(dir.path(), "s.jsonl", "");
        let report = load_samples(&samples, &SampleFormat::Jsonl).unwrap();
        assert!(report.samples.is_empty());
        assert!(report.rejections.is_empty());
    }

    #[test]
    fn missing_parse_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write(dir.path(), "s.jsonl", &format!("{}\n", record(("He", 0, 2))));
        let report = load_samples(&samples, &SampleFormat::Jsonl).unwrap();
        assert_eq!(report.rejections.len(), 1);
        assert!(report.rejections[0].reason.contains("no parse"));
    }

    #[test]
    fn embedded_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write(dir.path(), "s.jsonl", &format!("{}\n", record(("He", 0, 2))));
        let parses = write(dir.path(), "p.conllu", &fig1_conllu());
        let first = load_samples(&samples, &SampleFormat::ConlluPair(parses)).unwrap();
        let text = samples_to_jsonl(&first.samples);
        let stored = write(dir.path(), "store.jsonl", &text);
        let second = load_samples(&stored, &SampleFormat::Jsonl).unwrap();
        assert_eq!(second.samples, first.samples);
        assert_eq!(samples_to_jsonl(&second.samples), text);
    }
}
