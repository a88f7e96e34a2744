use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusError, Interval};
use crate::tokenize::{Tokenizer, SEP};

/// An ordered list of sentences, optionally timed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<Interval>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, sentences: Vec<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            sentences,
            intervals: None,
        }
    }
}

/// `k` consecutive sentences of one document starting at `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceGroup {
    pub doc_id: String,
    pub start: usize,
    pub sentences: Vec<String>,
}

/// Fingerprints of groups whose documents must not be used.
pub type ExclusionSet = BTreeSet<String>;

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Hex sha256 of the lowercased, whitespace-collapsed sentences joined by
/// U+001F.
pub fn group_fingerprint<S: AsRef<str>>(sentences: &[S]) -> String {
    let text = sentences
        .iter()
        .map(|s| normalize(s.as_ref()))
        .collect::<Vec<_>>()
        .join("\u{1f}");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Windows `[i, i+k)` for `i = 0, stride, 2·stride, …`. A document with any
/// window in `exclusions` yields nothing.
pub fn extract_groups(
    doc: &Document,
    k: usize,
    stride: usize,
    exclusions: &ExclusionSet,
) -> Result<Vec<SentenceGroup>, CorpusError> {
    if k == 0 || stride == 0 {
        return Err(CorpusError::Argument(format!("k={k} stride={stride} must be positive")));
    }
    let n = doc.sentences.len();
    if !exclusions.is_empty() && n >= k {
        let hit = (0..=n - k).any(|i| exclusions.contains(&group_fingerprint(&doc.sentences[i..i + k])));
        if hit {
            return Ok(Vec::new());
        }
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i + k <= n {
        out.push(SentenceGroup {
            doc_id: doc.doc_id.clone(),
            start: i,
            sentences: doc.sentences[i..i + k].to_vec(),
        });
        i += stride;
    }
    Ok(out)
}

/// Sentence encodings joined by single SEP ids.
pub fn concat_group<S: AsRef<str>>(sentences: &[S], tok: &Tokenizer) -> Vec<u32> {
    join_encoded(&sentences.iter().map(|s| tok.encode(s.as_ref())).collect::<Vec<_>>())
}

pub fn join_encoded(parts: &[Vec<u32>]) -> Vec<u32> {
    let mut out = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.extend_from_slice(p);
    }
    out
}

/// Splits on SEP; `m` separators give `m + 1` segments.
pub fn split_group(ids: &[u32]) -> Vec<Vec<u32>> {
    ids.split(|&t| t == SEP).map(<[u32]>::to_vec).collect()
}
