use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::vocab::{Vocabulary, NUM_RESERVED, UNK};
use super::TokenizeError;

/// Suffix attached to the final symbol of every word.
pub const END_OF_WORD: &str = "</w>";

const MERGES_HEADER: &str = "#version: 1";

/// Ordered merge rules; earlier rules have higher priority.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    rank: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self, TokenizeError> {
        let mut rank = HashMap::with_capacity(merges.len());
        for (i, pair) in merges.iter().enumerate() {
            if rank.insert(pair.clone(), i).is_some() {
                return Err(TokenizeError::Format {
                    what: "merge table",
                    line: i + 2,
                    reason: format!("duplicate pair {} {}", pair.0, pair.1),
                });
            }
        }
        Ok(Self { merges, rank })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        // HashMap<(String, String)> cannot be queried by (&str, &str) directly.
        self.rank.get(&(left.to_string(), right.to_string())).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MERGES_HEADER);
        s.push('\n');
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizeError> {
        let mut lines = text.lines();
        if lines.next() != Some(MERGES_HEADER) {
            return Err(TokenizeError::Format {
                what: "merge table",
                line: 1,
                reason: format!("expected header {MERGES_HEADER:?}"),
            });
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(TokenizeError::Format {
                        what: "merge table",
                        line: i + 2,
                        reason: format!("expected \"left right\", got {line:?}"),
                    })
                }
            }
        }
        Self::from_merges(merges)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizeError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Vocabulary implied by the merges: reserved tokens, every base symbol in
    /// `alphabet` with and without the end-of-word suffix, then merged symbols
    /// in rule order.
    pub fn vocabulary(&self, alphabet: &BTreeSet<char>) -> Vocabulary {
        let mut base: Vec<String> = Vec::with_capacity(alphabet.len() * 2);
        for c in alphabet {
            base.push(c.to_string());
            base.push(format!("{c}{END_OF_WORD}"));
        }
        base.sort();
        let merged = self.merges.iter().map(|(l, r)| format!("{l}{r}"));
        Vocabulary::from_symbols(base.into_iter().chain(merged))
    }
}

/// Result of [`bpe_train`].
#[derive(Debug, Clone)]
pub struct TrainedBpe {
    pub merges: MergeTable,
    pub vocab: Vocabulary,
    /// Pair frequency of each merge at the moment it was selected.
    pub selection_counts: Vec<usize>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::with_capacity(chars.len());
    for (i, c) in chars.iter().enumerate() {
        if i + 1 == chars.len() {
            out.push(format!("{c}{END_OF_WORD}"));
        } else {
            out.push(c.to_string());
        }
    }
    out
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let merged = format!("{left}{right}");
            symbols[i] = merged;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

/// Learns up to `num_merges` rules, each time merging the most frequent
/// adjacent pair. Equal frequencies go to the lexicographically smallest
/// pair. Training stops early once no adjacent pair remains.
pub fn bpe_train<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Result<TrainedBpe, TokenizeError> {
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut alphabet = BTreeSet::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
            alphabet.extend(w.chars());
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizeError::EmptyCorpus);
    }
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .iter()
        .map(|(w, &c)| (word_symbols(w), c))
        .collect();

    let mut merges = Vec::new();
    let mut selection_counts = Vec::new();
    for _ in 0..num_merges {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += count;
            }
        }
        let best = pairs
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), count)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        for (symbols, _) in &mut words {
            merge_pair(symbols, &l, &r);
        }
        merges.push((l, r));
        selection_counts.push(count);
    }
    let merges = MergeTable::from_merges(merges)?;
    let vocab = merges.vocabulary(&alphabet);
    Ok(TrainedBpe {
        merges,
        vocab,
        selection_counts,
    })
}

fn encode_word(word: &str, merges: &MergeTable) -> Vec<String> {
    let mut symbols = word_symbols(word);
    loop {
        let best = symbols
            .windows(2)
            .filter_map(|w| merges.rank(&w[0], &w[1]).map(|r| (r, w[0].clone(), w[1].clone())))
            .min_by_key(|(r, _, _)| *r);
        match best {
            Some((_, l, r)) => merge_pair(&mut symbols, &l, &r),
            None => break,
        }
    }
    symbols
}

/// Applies merges in rank order to each whitespace-separated word. Symbols
/// missing from `vocab` become [`UNK`]. Never emits other control ids.
pub fn bpe_encode(text: &str, merges: &MergeTable, vocab: &Vocabulary) -> Vec<u32> {
    let mut ids = Vec::new();
    for word in text.split_whitespace() {
        for sym in encode_word(word, merges) {
            ids.push(vocab.id(&sym).filter(|&id| id >= NUM_RESERVED).unwrap_or(UNK));
        }
    }
    ids
}

/// Joins sub-words, turning end-of-word markers into single spaces and
/// dropping control tokens.
pub fn bpe_decode(ids: &[u32], vocab: &Vocabulary) -> Result<String, TokenizeError> {
    let mut out = String::new();
    for &id in ids {
        let token = vocab.token(id).ok_or(TokenizeError::UnknownId(id))?;
        if Vocabulary::is_control(id) {
            continue;
        }
        match token.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                out.push_str(stem);
                out.push(' ');
            }
            None => out.push_str(token),
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    Ok(out)
}
