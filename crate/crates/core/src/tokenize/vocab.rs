use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TokenizeError;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
/// Joins the sentences of a group into one pseudo-sentence.
pub const SEP: u32 = 4;
pub const NUM_RESERVED: u32 = 5;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED as usize] = ["<pad>", "<s>", "</s>", "<unk>", "<sep>"];

/// Bijective token ↔ id map. Reserved tokens occupy ids `0..NUM_RESERVED`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from sub-word symbols in order; reserved tokens are
    /// prepended and duplicates dropped.
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for t in RESERVED_TOKENS {
            vocab.push(t.to_string());
        }
        for s in symbols {
            vocab.push(s.into());
        }
        vocab
    }

    fn push(&mut self, token: String) {
        if self.ids.contains_key(&token) {
            return;
        }
        self.ids.insert(token.clone(), self.tokens.len() as u32);
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_control(id: u32) -> bool {
        id < NUM_RESERVED
    }

    /// Short content hash used to tie checkpoints to the vocabulary they were
    /// trained with.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// One token per line; ids are line numbers.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizeError> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, r) in RESERVED_TOKENS.iter().enumerate() {
            if lines.get(i) != Some(r) {
                return Err(TokenizeError::Format {
                    what: "vocabulary",
                    line: i + 1,
                    reason: format!("expected reserved token {r}"),
                });
            }
        }
        let vocab = Self::from_symbols(lines[RESERVED_TOKENS.len()..].iter().copied());
        if vocab.len() != lines.len() {
            return Err(TokenizeError::Format {
                what: "vocabulary",
                line: 0,
                reason: "duplicate tokens".into(),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizeError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
