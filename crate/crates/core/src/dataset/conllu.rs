//! Minimal CoNLL-U reader/writer: the 10-column word lines, `# sent_id` and `# text`.
//!
//! Multiword-token ranges (`1-2`) and empty nodes (`1.1`) are skipped.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::dataset::DepToken;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConlluWord {
    pub form: String,
    pub upos: String,
    pub xpos: String,
    /// 1-based head, 0 for root.
    pub head: usize,
    pub deprel: String,
    pub misc: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConlluSentence {
    pub id: String,
    pub text: Option<String>,
    pub words: Vec<ConlluWord>,
    /// 1-based line of the first word line, for diagnostics.
    pub line: usize,
}

impl ConlluSentence {
    fn token_range(misc: &str) -> Option<(usize, usize)> {
        misc.split('|').find_map(|kv| {
            let v = kv.strip_prefix("TokenRange=")?;
            let (a, b) = v.split_once(':')?;
            Some((a.parse().ok()?, b.parse().ok()?))
        })
    }

    /// Convert to [`DepToken`]s, computing character offsets against `sentence`.
    ///
    /// A `TokenRange=start:end` MISC entry wins; otherwise each form is matched in order
    /// after skipping whitespace.
    pub fn to_dep_tokens(&self, sentence: &str) -> Result<Vec<DepToken>> {
        let chars: Vec<char> = sentence.chars().collect();
        let mut cursor = 0usize;
        let mut out = Vec::with_capacity(self.words.len());
        for (i, w) in self.words.iter().enumerate() {
            let (start, end) = match Self::token_range(&w.misc) {
                Some(range) => range,
                None => {
                    while cursor < chars.len() && chars[cursor].is_whitespace() {
                        cursor += 1;
                    }
                    let form: Vec<char> = w.form.chars().collect();
                    let end = cursor + form.len();
                    if end > chars.len() || chars[cursor..end] != form[..] {
                        return Err(Error::validation(format!(
                            "parse/sentence token mismatch: word {} {:?} of parse {:?} not found at character {}",
                            i + 1,
                            w.form,
                            self.id,
                            cursor
                        )));
                    }
                    (cursor, end)
                }
            };
            cursor = end;
            let pos = if w.upos != "_" { &w.upos } else { &w.xpos };
            out.push(DepToken {
                index: i,
                form: w.form.clone(),
                pos: pos.clone(),
                head: if w.head == 0 { i } else { w.head - 1 },
                deprel: w.deprel.clone(),
                char_start: start,
                char_end: end,
            });
        }
        Ok(out)
    }
}

/// Parse a CoNLL-U document into sentences keyed by `sent_id`.
pub fn parse_conllu(text: &str) -> Result<HashMap<String, ConlluSentence>> {
    let mut out = HashMap::new();
    let mut current: Option<ConlluSentence> = None;
    let mut anon = 0usize;

    let flush = |sent: Option<ConlluSentence>, out: &mut HashMap<String, ConlluSentence>| -> Result<()> {
        if let Some(s) = sent {
            if s.words.is_empty() {
                return Ok(());
            }
            if out.contains_key(&s.id) {
                return Err(Error::Parse {
                    line: s.line,
                    message: format!("duplicate sent_id {:?}", s.id),
                });
            }
            out.insert(s.id.clone(), s);
        }
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(current.take(), &mut out)?;
            continue;
        }
        let sent = current.get_or_insert_with(|| {
            anon += 1;
            ConlluSentence {
                id: format!("__anon{anon}"),
                text: None,
                words: Vec::new(),
                line: lineno,
            }
        });
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "sent_id" => sent.id = value.trim().to_string(),
                    "text" => sent.text = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad word id {:?}", cols[0]),
        })?;
        if id != sent.words.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("word id {} out of sequence", id),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad head {:?}", cols[6]),
        })?;
        if sent.words.is_empty() {
            sent.line = lineno;
        }
        sent.words.push(ConlluWord {
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            xpos: cols[4].to_string(),
            head,
            deprel: cols[7].to_string(),
            misc: cols[9].to_string(),
        });
    }
    flush(current.take(), &mut out)?;
    Ok(out)
}

/// Render parses as CoNLL-U. Offsets are kept in `TokenRange` so the output re-aligns exactly.
pub fn write_conllu<'a>(
    sentences: impl IntoIterator<Item = (&'a str, &'a str, &'a [DepToken])>,
) -> String {
    let mut out = String::new();
    for (id, text, tokens) in sentences {
        let _ = writeln!(out, "# sent_id = {id}");
        let _ = writeln!(out, "# text = {text}");
        for t in tokens {
            let head = if t.is_root() { 0 } else { t.head + 1 };
            let _ = writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\tTokenRange={}:{}",
                t.index + 1,
                t.form,
                t.pos,
                head,
                t.deprel,
                t.char_start,
                t.char_end
            );
        }
        out.push('\n');
    }
    out
}
