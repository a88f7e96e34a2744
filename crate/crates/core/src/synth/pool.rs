//! Sample pools, one record per sentence.
//!
//! Text layout: a header line `#pool v1 n=<n> provenance=<round_trip|one_way>`
//! followed by one line per sentence,
//! `doc_id<TAB>index<TAB>failed<TAB>back_translation<TAB>sample_1 … <TAB>sample_n`,
//! each sequence written as space-separated token ids.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{noise_tokens, SynthError};
use crate::corpus::join_encoded;
use crate::model::{Decoded, ModelError, Transformer};

/// Where the inconsistent side of an example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RoundTrip,
    OneWay,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::RoundTrip => "round_trip",
            Provenance::OneWay => "one_way",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "round_trip" => Some(Provenance::RoundTrip),
            "one_way" => Some(Provenance::OneWay),
            _ => None,
        }
    }
}

/// Pool record for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    /// Back-translation (round trip) or the true source (one way).
    pub back_translation: Vec<u32>,
    pub samples: Vec<Vec<u32>>,
    /// Some decode hit the length limit without EOS.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    pub n: usize,
    pub provenance: Provenance,
    pub entries: BTreeMap<(String, usize), PoolEntry>,
}

/// Decoding interface used to build pools.
pub trait Translator {
    fn beam(&self, src: &[u32], beam: usize) -> Result<Decoded, ModelError>;
    fn sample(&self, src: &[u32], temperature: f64, rng: &mut dyn RngCore) -> Result<Decoded, ModelError>;
}

impl Translator for Transformer {
    fn beam(&self, src: &[u32], beam: usize) -> Result<Decoded, ModelError> {
        self.translate_sentence(src, beam)
    }

    fn sample(&self, src: &[u32], temperature: f64, rng: &mut dyn RngCore) -> Result<Decoded, ModelError> {
        self.sample_sentence(src, temperature, rng)
    }
}

/// Generator seeded from `seed` and a key, independent of any other key.
pub fn derive_rng(seed: u64, key: &str, index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    h.update((index as u64).to_le_bytes());
    let d = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&d);
    ChaCha8Rng::from_seed(s)
}

fn sample_n<T: Translator + ?Sized>(
    fwd: &T,
    src: &[u32],
    n: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<u32>>, bool), SynthError> {
    let mut failed = false;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let d = fwd.sample(src, temperature, rng)?;
        failed |= !d.finished;
        out.push(d.tokens);
    }
    Ok((out, failed))
}

fn check(n: usize, temperature: f64) -> Result<(), SynthError> {
    if n == 0 || !(temperature > 0.0) {
        return Err(SynthError::Argument(format!("n={n} temperature={temperature}")));
    }
    Ok(())
}

/// Per sentence of `doc_id`: a beam-4 back-translation with `rev`, then
/// `n` samples of its translation with `fwd` at `temperature`. Each
/// sentence draws from its own generator, so sentences are independent.
pub fn round_trip<R: Translator + ?Sized, F: Translator + ?Sized>(
    doc_id: &str,
    sentences: &[Vec<u32>],
    rev: &R,
    fwd: &F,
    n: usize,
    temperature: f64,
    seed: u64,
    pool: &mut SamplePool,
) -> Result<(), SynthError> {
    check(n, temperature)?;
    for (i, s) in sentences.iter().enumerate() {
        let bt = rev.beam(s, 4)?;
        let mut rng = derive_rng(seed, doc_id, i);
        let (samples, failed) = sample_n(fwd, &bt.tokens, n, temperature, &mut rng)?;
        pool.entries.insert(
            (doc_id.to_string(), i),
            PoolEntry {
                back_translation: bt.tokens,
                samples,
                failed: failed || !bt.finished,
            },
        );
    }
    Ok(())
}

/// Per sentence: `n` samples translating the true source `sources[i]`.
pub fn one_way_samples<F: Translator + ?Sized>(
    doc_id: &str,
    sources: &[Option<Vec<u32>>],
    fwd: &F,
    n: usize,
    temperature: f64,
    seed: u64,
    pool: &mut SamplePool,
) -> Result<(), SynthError> {
    check(n, temperature)?;
    for (i, s) in sources.iter().enumerate() {
        let s = s
            .as_ref()
            .ok_or_else(|| SynthError::Argument(format!("document {doc_id} sentence {i} has no source")))?;
        let mut rng = derive_rng(seed, doc_id, i);
        let (samples, failed) = sample_n(fwd, s, n, temperature, &mut rng)?;
        pool.entries.insert(
            (doc_id.to_string(), i),
            PoolEntry {
                back_translation: s.clone(),
                samples,
                failed,
            },
        );
    }
    Ok(())
}

/// An inconsistent input group and its consistent target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairExample {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
    pub provenance: Provenance,
}

/// Picks one pool member per sentence uniformly, joins with SEP and noises
/// the input. `originals` are the encodings of sentences
/// `start..start + originals.len()` of `doc_id`.
pub fn assemble_example<R: Rng + ?Sized>(
    doc_id: &str,
    start: usize,
    originals: &[Vec<u32>],
    pool: &SamplePool,
    p_noise: f64,
    vocab_size: usize,
    rng: &mut R,
) -> Result<RepairExample, SynthError> {
    let mut picked = Vec::with_capacity(originals.len());
    for i in start..start + originals.len() {
        let e = pool
            .entries
            .get(&(doc_id.to_string(), i))
            .filter(|e| !e.samples.is_empty())
            .ok_or_else(|| SynthError::PoolGap(doc_id.to_string(), i))?;
        picked.push(e.samples[rng.gen_range(0..e.samples.len())].clone());
    }
    let input = noise_tokens(&join_encoded(&picked), p_noise, vocab_size, rng);
    Ok(RepairExample {
        input,
        target: join_encoded(originals),
        provenance: pool.provenance,
    })
}

fn ids_to_text(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

pub(crate) fn text_to_ids(s: &str) -> Result<Vec<u32>, std::num::ParseIntError> {
    s.split_whitespace().map(str::parse).collect()
}

impl SamplePool {
    pub fn new(n: usize, provenance: Provenance) -> Self {
        Self {
            n,
            provenance,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, doc_id: &str, index: usize) -> Option<&PoolEntry> {
        self.entries.get(&(doc_id.to_string(), index))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#pool v1 n={} provenance={}\n", self.n, self.provenance.as_str());
        for ((doc, i), e) in &self.entries {
            s.push_str(&format!("{doc}\t{i}\t{}\t{}", u8::from(e.failed), ids_to_text(&e.back_translation)));
            for m in &e.samples {
                s.push('\t');
                s.push_str(&ids_to_text(m));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SynthError> {
        let bad = |line: usize, reason: String| SynthError::Format {
            what: "sample pool",
            line,
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (n, prov) = match fields.as_slice() {
            ["#pool", "v1", n, p] => (
                n.strip_prefix("n=").and_then(|v| v.parse::<usize>().ok()),
                p.strip_prefix("provenance=").and_then(Provenance::parse),
            ),
            _ => (None, None),
        };
        let (Some(n), Some(provenance)) = (n, prov) else {
            return Err(bad(1, format!("bad header {header:?}")));
        };
        let mut pool = SamplePool::new(n, provenance);
        for (ln, line) in lines.enumerate() {
            let ln = ln + 2;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 + n {
                return Err(bad(ln, format!("expected {} fields, found {}", 4 + n, f.len())));
            }
            let idx = f[1].parse::<usize>().map_err(|e| bad(ln, e.to_string()))?;
            let failed = match f[2] {
                "0" => false,
                "1" => true,
                other => return Err(bad(ln, format!("bad failure flag {other:?}"))),
            };
            let ids = |s: &str| text_to_ids(s).map_err(|e| bad(ln, e.to_string()));
            let entry = PoolEntry {
                back_translation: ids(f[3])?,
                samples: f[4..].iter().map(|s| ids(s)).collect::<Result<_, _>>()?,
                failed,
            };
            if pool.entries.insert((f[0].to_string(), idx), entry).is_some() {
                return Err(bad(ln, format!("duplicate key ({}, {idx})", f[0])));
            }
        }
        Ok(pool)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{EOS, SEP};

    /// Echoes the input; sampling appends one random token with the
    /// given temperature treated as a probability.
    struct Echo;

    impl Translator for Echo {
        fn beam(&self, src: &[u32], _: usize) -> Result<Decoded, ModelError> {
            Ok(Decoded {
                tokens: src.to_vec(),
                log_prob: 0.0,
                finished: true,
            })
        }
        fn sample(&self, src: &[u32], t: f64, rng: &mut dyn RngCore) -> Result<Decoded, ModelError> {
            let mut tokens = src.to_vec();
            if rng.gen::<f64>() < t {
                tokens.push(rng.gen_range(5..9));
            }
            Ok(Decoded {
                tokens,
                log_prob: 0.0,
                finished: true,
            })
        }
    }

    fn doc() -> Vec<Vec<u32>> {
        vec![vec![5, 6], vec![7], vec![8, 8, 6], vec![5]]
    }

    #[test]
    fn identity_models_give_identity_pool() {
        let mut pool = SamplePool::new(20, Provenance::RoundTrip);
        round_trip("d", &doc(), &Echo, &Echo, 20, 1e-9, 3, &mut pool).unwrap();
        for (i, s) in doc().iter().enumerate() {
            let e = pool.get("d", i).unwrap();
            assert_eq!(e.samples.len(), 20);
            assert!(e.samples.iter().all(|m| m == s));
        }
    }

    #[test]
    fn sentences_are_isolated() {
        let mut a = SamplePool::new(5, Provenance::RoundTrip);
        let mut b = SamplePool::new(5, Provenance::RoundTrip);
        let mut changed = doc();
        changed[2] = vec![9, 9];
        round_trip("d", &doc(), &Echo, &Echo, 5, 0.7, 3, &mut a).unwrap();
        round_trip("d", &changed, &Echo, &Echo, 5, 0.7, 3, &mut b).unwrap();
        for i in [0, 1, 3] {
            assert_eq!(a.get("d", i), b.get("d", i));
        }
        assert_ne!(a.get("d", 2), b.get("d", 2));
    }

    #[test]
    fn one_way_requires_sources() {
        let mut pool = SamplePool::new(3, Provenance::OneWay);
        let src = vec![Some(vec![5]), None];
        assert!(one_way_samples("d", &src, &Echo, 3, 0.5, 0, &mut pool).is_err());
        let src = vec![Some(vec![5]), Some(vec![6, 7])];
        one_way_samples("d", &src, &Echo, 3, 1e-9, 0, &mut pool).unwrap();
        assert!(pool.get("d", 1).unwrap().samples.iter().all(|s| s == &vec![6, 7]));
        let ex = assemble_example("d", 0, &[vec![5], vec![6]], &pool, 0.0, 10, &mut derive_rng(0, "x", 0)).unwrap();
        assert_eq!(ex.provenance, Provenance::OneWay);
    }

    #[test]
    fn assembly_keeps_targets_and_separators() {
        let mut pool = SamplePool::new(4, Provenance::RoundTrip);
        round_trip("d", &doc(), &Echo, &Echo, 4, 0.9, 1, &mut pool).unwrap();
        let mut rng = derive_rng(5, "asm", 0);
        for _ in 0..50 {
            let ex = assemble_example("d", 0, &doc(), &pool, 0.3, 10, &mut rng).unwrap();
            assert_eq!(ex.target, join_encoded(&doc()));
            assert_eq!(ex.input.iter().filter(|&&t| t == SEP).count(), 3);
            assert!(!ex.input.contains(&EOS));
        }
        assert!(matches!(
            assemble_example("d", 2, &doc(), &pool, 0.0, 10, &mut rng),
            Err(SynthError::PoolGap(_, 4))
        ));
    }

    #[test]
    fn text_roundtrip() {
        let mut pool = SamplePool::new(3, Provenance::RoundTrip);
        round_trip("doc a", &doc(), &Echo, &Echo, 3, 0.5, 9, &mut pool).unwrap();
        pool.entries.get_mut(&("doc a".to_string(), 1)).unwrap().samples[0].clear();
        pool.entries.get_mut(&("doc a".to_string(), 2)).unwrap().failed = true;
        assert_eq!(SamplePool::from_text(&pool.to_text()).unwrap(), pool);
        assert!(SamplePool::from_text("#pool v1 n=2 provenance=round_trip\nd\t0\t0\t5\t6\n").is_err());
        assert!(SamplePool::from_text("#pool v2 n=2 provenance=x\n").is_err());
    }
}
