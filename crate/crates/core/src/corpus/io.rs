//! Plain-text corpus formats.
//!
//! Monolingual: one sentence per line, documents separated by blank lines;
//! ids are assigned as `{prefix}{n}` in file order.
//!
//! Timed: `doc_id<TAB>start<TAB>end<TAB>text`, lines of a document
//! contiguous.
//!
//! Alignment: `src_line<TAB>tgt_line`, 0-based line numbers into two timed
//! files.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{relative_overlap, CorpusError, Document, Interval, OverlapMode};

fn bad(what: &'static str, line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::Format {
        what,
        line,
        reason: reason.into(),
    }
}

pub fn parse_mono(text: &str, prefix: &str) -> Vec<Document> {
    let mut docs = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !cur.is_empty() {
                docs.push(Document::new(format!("{prefix}{}", docs.len()), std::mem::take(&mut cur)));
            }
        } else {
            cur.push(line.to_string());
        }
    }
    if !cur.is_empty() {
        docs.push(Document::new(format!("{prefix}{}", docs.len()), cur));
    }
    docs
}

pub fn read_mono(path: &Path, prefix: &str) -> Result<Vec<Document>, CorpusError> {
    Ok(parse_mono(&fs::read_to_string(path)?, prefix))
}

pub fn format_mono(docs: &[Document]) -> String {
    docs.iter()
        .map(|d| d.sentences.iter().map(|s| format!("{s}\n")).collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn write_mono(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    Ok(fs::write(path, format_mono(docs))?)
}

/// One line of a timed file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSentence {
    pub doc_id: String,
    pub interval: Interval,
    pub text: String,
}

pub fn parse_timed(text: &str) -> Result<Vec<TimedSentence>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        let f: Vec<&str> = line.splitn(4, '\t').collect();
        if f.len() != 4 {
            return Err(bad("timed corpus", n + 1, "expected 4 tab-separated fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad("timed corpus", n + 1, e.to_string()));
        let interval = Interval::new(num(f[1])?, num(f[2])?)
            .map_err(|e| bad("timed corpus", n + 1, e.to_string()))?;
        out.push(TimedSentence {
            doc_id: f[0].to_string(),
            interval,
            text: f[3].to_string(),
        });
    }
    Ok(out)
}

/// Timed lines grouped into documents.
pub fn timed_documents(lines: &[TimedSentence]) -> Result<Vec<Document>, CorpusError> {
    let mut docs: Vec<Document> = Vec::new();
    let mut seen = HashSet::new();
    for (n, l) in lines.iter().enumerate() {
        match docs.last_mut() {
            Some(d) if d.doc_id == l.doc_id => {
                d.sentences.push(l.text.clone());
                d.intervals.get_or_insert_with(Vec::new).push(l.interval);
            }
            _ => {
                if !seen.insert(l.doc_id.clone()) {
                    return Err(bad("timed corpus", n + 1, format!("document {} is not contiguous", l.doc_id)));
                }
                docs.push(Document {
                    doc_id: l.doc_id.clone(),
                    sentences: vec![l.text.clone()],
                    intervals: Some(vec![l.interval]),
                });
            }
        }
    }
    Ok(docs)
}

pub fn read_timed(path: &Path) -> Result<Vec<Document>, CorpusError> {
    timed_documents(&parse_timed(&fs::read_to_string(path)?)?)
}

pub fn write_timed(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let mut s = String::new();
    for d in docs {
        let iv = d
            .intervals
            .as_ref()
            .ok_or_else(|| CorpusError::Argument(format!("document {} has no intervals", d.doc_id)))?;
        for (text, i) in d.sentences.iter().zip(iv) {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", d.doc_id, i.start, i.end, text));
        }
    }
    Ok(fs::write(path, s)?)
}

pub fn parse_alignment(text: &str) -> Result<Vec<(usize, usize)>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 2 {
                return Err(bad("alignment", n + 1, "expected two line indices"));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|e| bad("alignment", n + 1, e.to_string()));
            Ok((p(f[0])?, p(f[1])?))
        })
        .collect()
}

pub fn read_alignment(path: &Path) -> Result<Vec<(usize, usize)>, CorpusError> {
    parse_alignment(&fs::read_to_string(path)?)
}

/// Aligned subtitle lines and the overlap of their time frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub source: TimedSentence,
    pub target: TimedSentence,
    pub overlap: f64,
}

/// Aligned pairs whose overlap is at least `threshold`.
pub fn align_pairs(
    src: &[TimedSentence],
    tgt: &[TimedSentence],
    links: &[(usize, usize)],
    mode: OverlapMode,
    threshold: f64,
) -> Result<Vec<AlignedPair>, CorpusError> {
    let mut out = Vec::new();
    for (n, &(i, j)) in links.iter().enumerate() {
        let (Some(s), Some(t)) = (src.get(i), tgt.get(j)) else {
            return Err(bad("alignment", n + 1, format!("line pair ({i}, {j}) out of range")));
        };
        let overlap = relative_overlap(s.interval, t.interval, mode)?;
        if overlap >= threshold {
            out.push(AlignedPair {
                source: s.clone(),
                target: t.clone(),
                overlap,
            });
        }
    }
    Ok(out)
}

pub fn read_parallel(
    src: &Path,
    tgt: &Path,
    alignment: &Path,
    mode: OverlapMode,
    threshold: f64,
) -> Result<Vec<AlignedPair>, CorpusError> {
    let s = parse_timed(&fs::read_to_string(src)?)?;
    let t = parse_timed(&fs::read_to_string(tgt)?)?;
    align_pairs(&s, &t, &read_alignment(alignment)?, mode, threshold)
}
