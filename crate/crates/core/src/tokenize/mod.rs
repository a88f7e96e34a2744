//! Byte-pair encoding with a suffix end-of-word marker, plus the id
//! vocabulary and its reserved control tokens.

mod bpe;
mod vocab;

pub use bpe::{bpe_decode, bpe_encode, bpe_train, MergeTable, TrainedBpe, END_OF_WORD};
pub use vocab::{Vocabulary, BOS, EOS, NUM_RESERVED, PAD, RESERVED_TOKENS, SEP, UNK};

#[derive(Debug, thiserror::Error)]
pub enum TokenizeError {
    #[error("cannot train byte-pair encoding on an empty corpus")]
    EmptyCorpus,
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("malformed {what} file at line {line}: {reason}")]
    Format {
        what: &'static str,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Merge table plus the vocabulary built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    pub merges: MergeTable,
    pub vocab: Vocabulary,
}

impl Tokenizer {
    pub fn train<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Result<Self, TokenizeError> {
        let t = bpe_train(corpus, num_merges)?;
        Ok(Self {
            merges: t.merges,
            vocab: t.vocab,
        })
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        bpe_encode(text, &self.merges, &self.vocab)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizeError> {
        bpe_decode(ids, &self.vocab)
    }

    /// Writes `{stem}.merges` and `{stem}.vocab` under `dir`.
    pub fn save(&self, dir: &std::path::Path, stem: &str) -> Result<(), TokenizeError> {
        self.merges.save(&dir.join(format!("{stem}.merges")))?;
        self.vocab.save(&dir.join(format!("{stem}.vocab")))
    }

    pub fn load(dir: &std::path::Path, stem: &str) -> Result<Self, TokenizeError> {
        Ok(Self {
            merges: MergeTable::load(&dir.join(format!("{stem}.merges")))?,
            vocab: Vocabulary::load(&dir.join(format!("{stem}.vocab")))?,
        })
    }
}
