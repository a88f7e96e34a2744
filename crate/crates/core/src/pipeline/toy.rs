//! Synthetic agreement language.
//!
//! Every document has a speaker with a two-valued gender. Target-language
//! past-tense verbs agree with it; the source language never marks it on
//! first-person sentences. Only third-person sentences ("he"/"she") reveal
//! it on the source side, and every document starts with one, so
//! sentence-level translation must guess the gender of first-person verbs
//! while groups of target sentences reveal inconsistent guesses.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ToySizes;
use crate::corpus::{group_fingerprint, Document, ExclusionSet};
use crate::eval::{ContrastiveInstance, Phenomenon};
use crate::synth::derive_rng;

/// (source past, source present, target masculine past, target feminine past, target present)
const VERBS: [(&str, &str, &str, &str, &str); 8] = [
    ("saw", "see", "videl", "videla", "vizhu"),
    ("found", "find", "nashel", "nashla", "nahozhu"),
    ("bought", "buy", "kupil", "kupila", "pokupayu"),
    ("took", "take", "vzyal", "vzyala", "beru"),
    ("painted", "paint", "risoval", "risovala", "risuyu"),
    ("washed", "wash", "myl", "myla", "moyu"),
    ("lost", "lose", "poteryal", "poteryala", "teryayu"),
    ("sold", "sell", "prodal", "prodala", "prodayu"),
];
const NOUNS: [(&str, &str); 8] = [
    ("cat", "koshku"),
    ("dog", "sobaku"),
    ("house", "dom"),
    ("car", "mashinu"),
    ("book", "knigu"),
    ("table", "stol"),
    ("window", "okno"),
    ("garden", "sad"),
];
/// Nouns after a preposition take a different target form.
const NOUNS_OBLIQUE: [&str; 8] = ["koshkoj", "sobakoj", "domom", "mashinoj", "knigoj", "stolom", "oknom", "sadom"];
const ADJECTIVES: [(&str, &str); 6] = [
    ("red", "krasnyj"),
    ("big", "bolshoj"),
    ("old", "staryj"),
    ("new", "novyj"),
    ("small", "malenkij"),
    ("green", "zelenyj"),
];
const PREPOSITIONS: [(&str, &str); 3] = [("near", "ryadom_s"), ("behind", "za"), ("under", "pod")];
const ADVERBS: [(&str, &str); 4] = [("today", "segodnya"), ("again", "snova"), ("quickly", "bystro"), ("there", "tam")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Masculine,
    Feminine,
}

impl Gender {
    pub fn other(self) -> Self {
        match self {
            Gender::Masculine => Gender::Feminine,
            Gender::Feminine => Gender::Masculine,
        }
    }
}

/// How a sentence refers to the speaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Third person, gender visible on both sides.
    Explicit,
    /// First person past tense, gender visible on the target side only.
    Implicit,
    /// First person present tense, no gender anywhere.
    Neutral,
}

/// Lexical content of a sentence, rendered for a given gender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Content {
    pub kind: Kind,
    verb: usize,
    noun: usize,
    adjective: Option<usize>,
    phrase: Option<(usize, usize)>,
    adverb: usize,
}

impl Content {
    pub fn random<R: Rng + ?Sized>(kind: Kind, rng: &mut R) -> Self {
        Self {
            kind,
            verb: rng.gen_range(0..VERBS.len()),
            noun: rng.gen_range(0..NOUNS.len()),
            adjective: rng.gen_bool(0.5).then(|| rng.gen_range(0..ADJECTIVES.len())),
            phrase: rng
                .gen_bool(0.4)
                .then(|| (rng.gen_range(0..PREPOSITIONS.len()), rng.gen_range(0..NOUNS.len()))),
            adverb: rng.gen_range(0..ADVERBS.len()),
        }
    }

    /// (source, target) sentence.
    pub fn render(&self, g: Gender) -> (String, String) {
        let v = VERBS[self.verb];
        let (ssubj, tsubj) = match (self.kind, g) {
            (Kind::Explicit, Gender::Masculine) => ("he", "on"),
            (Kind::Explicit, Gender::Feminine) => ("she", "ona"),
            _ => ("i", "ja"),
        };
        let (sverb, tverb) = match (self.kind, g) {
            (Kind::Neutral, _) => (v.1, v.4),
            (_, Gender::Masculine) => (v.0, v.2),
            (_, Gender::Feminine) => (v.0, v.3),
        };
        let mut src = vec![ssubj, sverb, "the"];
        let mut tgt = vec![ADVERBS[self.adverb].1, tsubj, tverb];
        if let Some(a) = self.adjective {
            src.push(ADJECTIVES[a].0);
            tgt.push(ADJECTIVES[a].1);
        }
        src.push(NOUNS[self.noun].0);
        tgt.push(NOUNS[self.noun].1);
        if let Some((p, n)) = self.phrase {
            src.extend([PREPOSITIONS[p].0, "the", NOUNS[n].0]);
            tgt.extend([PREPOSITIONS[p].1, NOUNS_OBLIQUE[n]]);
        }
        src.push(ADVERBS[self.adverb].0);
        (src.join(" "), tgt.join(" "))
    }
}

/// Gender marked by a target sentence, if any.
pub fn target_gender(sentence: &str) -> Option<Gender> {
    sentence.split_whitespace().find_map(|w| {
        VERBS.iter().find_map(|v| {
            if w == v.2 {
                Some(Gender::Masculine)
            } else if w == v.3 {
                Some(Gender::Feminine)
            } else {
                None
            }
        })
    })
}

/// A document-aligned parallel corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelDocs {
    pub src: Vec<Document>,
    pub tgt: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub train: ParallelDocs,
    pub mono: Vec<Document>,
    pub dev: ParallelDocs,
    pub test: ParallelDocs,
    pub contrastive_dev: Vec<ContrastiveInstance>,
    pub contrastive_test: Vec<ContrastiveInstance>,
    /// Fingerprints of every evaluation group.
    pub exclusions: ExclusionSet,
}

fn document<R: Rng + ?Sized>(id: &str, rng: &mut R) -> (Document, Document, Gender) {
    let g = if rng.gen_bool(0.5) { Gender::Masculine } else { Gender::Feminine };
    let n = rng.gen_range(4..=8);
    let mut src = Vec::with_capacity(n);
    let mut tgt = Vec::with_capacity(n);
    for i in 0..n {
        let kind = if i == 0 {
            Kind::Explicit
        } else {
            let u: f64 = rng.gen();
            if u < 0.25 {
                Kind::Explicit
            } else if u < 0.75 {
                Kind::Implicit
            } else {
                Kind::Neutral
            }
        };
        let (s, t) = Content::random(kind, rng).render(g);
        src.push(s);
        tgt.push(t);
    }
    (Document::new(id, src), Document::new(id, tgt), g)
}

fn documents<R: Rng + ?Sized>(prefix: &str, n: usize, rng: &mut R) -> ParallelDocs {
    let (mut src, mut tgt) = (Vec::new(), Vec::new());
    for i in 0..n {
        let (s, t, _) = document(&format!("{prefix}{i}"), rng);
        src.push(s);
        tgt.push(t);
    }
    ParallelDocs { src, tgt }
}

/// Instances for `items` content draws at each distance 1–3. Each draw is
/// emitted once per gender, so the suite is balanced.
pub fn contrastive_suite<R: Rng + ?Sized>(items: usize, rng: &mut R) -> Vec<ContrastiveInstance> {
    let mut out = Vec::new();
    for d in 1..=3usize {
        for _ in 0..items {
            let anchor = 3 - d;
            let contents: Vec<Content> = (0..4)
                .map(|i| {
                    let kind = if i == anchor {
                        Kind::Explicit
                    } else if i == 3 {
                        Kind::Implicit
                    } else {
                        Kind::Neutral
                    };
                    Content::random(kind, rng)
                })
                .collect();
            for g in [Gender::Masculine, Gender::Feminine] {
                let rendered: Vec<(String, String)> = contents.iter().map(|c| c.render(g)).collect();
                let wrong = contents[3].render(g.other()).1;
                out.push(ContrastiveInstance {
                    source: rendered.iter().map(|r| r.0.clone()).collect(),
                    context: rendered[..3].iter().map(|r| r.1.clone()).collect(),
                    true_: vec![rendered[3].1.clone()],
                    contrastive: vec![vec![wrong]],
                    phenomenon: Phenomenon::Deixis,
                    distance: Some(d as u32),
                });
            }
        }
    }
    out.shuffle(rng);
    out
}

/// Generates every toy corpus from `seed`.
pub fn make_toy_corpus(seed: u64, sizes: &ToySizes) -> ToyCorpus {
    let mut rng = derive_rng(seed, "toy", 0);
    let train = documents("train", sizes.parallel_docs, &mut rng);
    let mono = documents("mono", sizes.mono_docs, &mut rng).tgt;
    let dev = documents("dev", sizes.dev_docs, &mut rng);
    let test = documents("test", sizes.test_docs, &mut rng);
    let contrastive_dev = contrastive_suite(sizes.contrastive_dev_items, &mut rng);
    let contrastive_test = contrastive_suite(sizes.contrastive_test_items, &mut rng);
    let mut exclusions = ExclusionSet::new();
    for inst in contrastive_dev.iter().chain(&contrastive_test) {
        exclusions.insert(group_fingerprint(&inst.candidate_groups()[0]));
    }
    for d in dev.tgt.iter().chain(&test.tgt) {
        for w in d.sentences.windows(4) {
            exclusions.insert(group_fingerprint(w));
        }
    }
    ToyCorpus {
        train,
        mono,
        dev,
        test,
        contrastive_dev,
        contrastive_test,
        exclusions,
    }
}
