//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use docrepair::model::{
    beam_search, decoder_io, encoder_input, greedy, BeamConfig, IncrementalDecoder, StepModel, Transformer,
    TransformerConfig,
};
use docrepair::numerics::{AttentionLayout, AttentionSegment, Graph, Tensor, Var};
use docrepair::tokenize::{BOS, EOS, PAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub max_rel: f64,
}

fn weighted_loss<F>(f: &F, xs: &[Tensor], w: Option<&Tensor>) -> (Graph, Vec<Var>, Var, Vec<usize>)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let shape = g.value(out).shape().to_vec();
    let loss = match w {
        Some(w) => {
            let wv = g.constant(w.clone());
            let prod = g.mul(out, wv).unwrap();
            g.sum(prod)
        }
        None => g.sum(out),
    };
    (g, vars, loss, shape)
}

/// Compares analytic gradients of `sum(w ⊙ f(inputs))`, `w` random, with
/// central differences at every input coordinate.
pub fn check_op<F>(name: &str, inputs: Vec<Tensor>, rng: &mut ChaCha8Rng, f: F) -> GradCase
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let shape = weighted_loss(&f, &inputs, None).3;
    let w = rand_tensor(rng, &shape);
    let value = |xs: &[Tensor]| {
        let (g, _, loss, _) = weighted_loss(&f, xs, Some(&w));
        g.value(loss).item()
    };
    let (mut g, vars, loss, _) = weighted_loss(&f, &inputs, Some(&w));
    g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    GradCase {
        name: name.to_string(),
        max_rel: worst,
    }
}

/// Random values kept at least `margin` away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn packed_segments(rng: &mut ChaCha8Rng, seqs: usize, same_lengths: bool) -> (Vec<AttentionSegment>, usize, usize) {
    let (mut q, mut k) = (0, 0);
    let mut segs = Vec::new();
    for _ in 0..seqs {
        let ql = rng.gen_range(1..=3);
        let kl = if same_lengths { ql } else { rng.gen_range(1..=3) };
        segs.push(AttentionSegment {
            q_start: q,
            q_len: ql,
            k_start: k,
            k_len: kl,
        });
        q += ql;
        k += kl;
    }
    (segs, q, k)
}

/// Every differentiable graph primitive on `per_op` random instances each.
pub fn primitive_cases(seed: u64, per_op: usize) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for _ in 0..per_op {
        let (m, k, n) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        let ins = vec![rand_tensor(&mut r, &[m, k]), rand_tensor(&mut r, &[k, n])];
        out.push(check_op("matmul", ins, &mut r, |g, v| g.matmul(v[0], v[1]).unwrap()));
        let ins = vec![rand_tensor(&mut r, &[m, k]), rand_tensor(&mut r, &[n, k])];
        out.push(check_op("matmul_t", ins, &mut r, |g, v| g.matmul_t(v[0], v[1]).unwrap()));
        let ins = vec![rand_tensor(&mut r, &[m, n]), rand_tensor(&mut r, &[m, n])];
        out.push(check_op("add", ins, &mut r, |g, v| g.add(v[0], v[1]).unwrap()));
        let ins = vec![rand_tensor(&mut r, &[m, n]), rand_tensor(&mut r, &[n])];
        out.push(check_op("add_row", ins, &mut r, |g, v| g.add_row(v[0], v[1]).unwrap()));
        let ins = vec![rand_tensor(&mut r, &[m, n]), rand_tensor(&mut r, &[m, n])];
        out.push(check_op("mul", ins, &mut r, |g, v| g.mul(v[0], v[1]).unwrap()));
        let factor = r.gen_range(-2.0..2.0);
        out.push(check_op("scale", vec![rand_tensor(&mut r, &[m, n])], &mut r, move |g, v| g.scale(v[0], factor)));
        let ins = vec![away_from_zero(&mut r, &[m, n], 0.05)];
        out.push(check_op("relu", ins, &mut r, |g, v| g.relu(v[0])));
        out.push(check_op("softmax", vec![rand_tensor(&mut r, &[m, n + 1])], &mut r, |g, v| g.softmax(v[0])));
        let d = r.gen_range(2..6);
        let ins = vec![rand_tensor(&mut r, &[m, d]), rand_tensor(&mut r, &[d]), rand_tensor(&mut r, &[d])];
        out.push(check_op("layer_norm", ins, &mut r, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-6).unwrap()));
        let vocab = r.gen_range(2..6);
        let ids: Vec<u32> = (0..r.gen_range(1..5)).map(|_| r.gen_range(0..vocab as u32)).collect();
        out.push(check_op("embedding", vec![rand_tensor(&mut r, &[vocab, 3])], &mut r, move |g, v| {
            g.embedding(v[0], &ids).unwrap()
        }));
        let heads = r.gen_range(1..3);
        let dim = heads * r.gen_range(1..3);
        let causal = r.gen_bool(0.5);
        let (segments, qr, kr) = { let batch = r.gen_range(1..3); packed_segments(&mut r, batch, causal) };
        let mut key_mask: Vec<bool> = (0..kr).map(|_| r.gen_bool(0.2)).collect();
        for s in &segments {
            key_mask[s.k_start] = false;
        }
        let layout = AttentionLayout {
            heads,
            segments,
            causal,
            key_mask: Some(key_mask),
        };
        let ins = vec![
            rand_tensor(&mut r, &[qr, dim]),
            rand_tensor(&mut r, &[kr, dim]),
            rand_tensor(&mut r, &[kr, dim]),
        ];
        out.push(check_op("attention", ins, &mut r, move |g, v| {
            g.attention(v[0], v[1], v[2], layout.clone()).unwrap()
        }));
        let (rows, vocab) = (r.gen_range(1..5), r.gen_range(2..6));
        let targets: Vec<u32> = (0..rows).map(|_| r.gen_range(0..vocab as u32)).collect();
        let smoothing = if r.gen_bool(0.5) { 0.0 } else { r.gen_range(0.0..0.3) };
        let pad = if r.gen_bool(0.5) { Some(targets[0]) } else { None };
        out.push(check_op("cross_entropy", vec![rand_tensor(&mut r, &[rows, vocab])], &mut r, move |g, v| {
            g.cross_entropy(v[0], &targets, smoothing, pad).unwrap()
        }));
        out.push(check_op("sum", vec![rand_tensor(&mut r, &[m, n])], &mut r, |g, v| g.sum(v[0])));
    }
    out
}

pub fn tiny_config(vocab: usize, tie: bool) -> TransformerConfig {
    TransformerConfig {
        num_layers: 1,
        num_heads: 2,
        model_dim: 4,
        ff_dim: 6,
        dropout: 0.0,
        label_smoothing: 0.1,
        max_positions: 16,
        src_vocab_size: vocab,
        tgt_vocab_size: vocab,
        tie_embeddings: tie,
    }
}

fn batch_ce(model: &Transformer, batch: &[(Vec<u32>, Vec<u32>)]) -> (Graph, docrepair::model::ParamVars, Var) {
    let enc: Vec<Vec<u32>> = batch.iter().map(|(s, _)| encoder_input(s)).collect();
    let io: Vec<(Vec<u32>, Vec<u32>)> = batch.iter().map(|(_, t)| decoder_io(t)).collect();
    let src: Vec<&[u32]> = enc.iter().map(Vec::as_slice).collect();
    let tin: Vec<&[u32]> = io.iter().map(|(i, _)| i.as_slice()).collect();
    let targets: Vec<u32> = io.iter().flat_map(|(_, o)| o.iter().copied()).collect();
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let logits = model.forward_graph(&mut g, &p, &src, &tin, None).unwrap();
    let loss = g
        .cross_entropy(logits, &targets, model.config.label_smoothing, Some(PAD))
        .unwrap();
    (g, p, loss)
}

/// Finite differences over every parameter of a tiny Transformer's
/// batch loss.
pub fn transformer_case(seed: u64, tie: bool) -> GradCase {
    let mut r = rng(seed);
    let vocab = 8;
    let model = Transformer::init(tiny_config(vocab, tie), &mut r).unwrap();
    let word = |r: &mut ChaCha8Rng| r.gen_range(5..vocab as u32);
    let batch: Vec<(Vec<u32>, Vec<u32>)> = (0..2)
        .map(|_| {
            let s = (0..r.gen_range(1..4)).map(|_| word(&mut r)).collect();
            let t = (0..r.gen_range(1..4)).map(|_| word(&mut r)).collect();
            (s, t)
        })
        .collect();
    let (mut g, p, loss) = batch_ce(&model, &batch);
    g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (name, t) in &model.params {
        let analytic = g.grad(p.get(name)).unwrap_or_else(|| Tensor::zeros(t.shape()));
        for j in 0..t.len() {
            let at = |delta: f64| {
                let mut m = model.clone();
                m.params.get_mut(name).unwrap().data_mut()[j] += delta;
                let (g, _, l) = batch_ce(&m, &batch);
                g.value(l).item()
            };
            let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    GradCase {
        name: format!("transformer(tied={tie})"),
        max_rel: worst,
    }
}

/// Reference learning rate from the warmup/inverse-square-root closed form,
/// written with square roots instead of powers.
pub fn reference_lr(step: u64, warmup: u64, scale: f64) -> f64 {
    let s = step as f64;
    let w = warmup as f64;
    let warm = s / (w * w.sqrt());
    let decay = 1.0 / s.sqrt();
    scale * if warm < decay { warm } else { decay }
}

/// Brute-force corpus BLEU-4: explicit n-gram lists, clipped counts, no
/// smoothing; zero when any order has no match.
pub fn brute_bleu(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hl, mut rl) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<String> = h.split_whitespace().map(String::from).collect();
        let r: Vec<String> = r.split_whitespace().map(String::from).collect();
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            let grams = |s: &[String]| {
                let mut m: BTreeMap<Vec<String>, usize> = BTreeMap::new();
                if s.len() >= n {
                    for i in 0..=s.len() - n {
                        *m.entry(s[i..i + n].to_vec()).or_default() += 1;
                    }
                }
                m
            };
            let (hg, rg) = (grams(&h), grams(&r));
            for (g, c) in &hg {
                totals[n - 1] += c;
                matches[n - 1] += (*c).min(rg.get(g).copied().unwrap_or(0));
            }
        }
    }
    if matches.iter().any(|&m| m == 0) {
        return 0.0;
    }
    let log_mean: f64 = (0..4).map(|i| (matches[i] as f64 / totals[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if hl < rl { (1.0 - rl as f64 / hl as f64).exp() } else { 1.0 };
    100.0 * bp * log_mean.exp()
}

/// Hand-built corpora, including the worked example and zero-precision cases.
pub fn bleu_corpora() -> Vec<(&'static str, Vec<&'static str>, Vec<&'static str>)> {
    vec![
        ("worked example", vec!["a b c d e"], vec!["a b c d f"]),
        ("identical", vec!["the cat sat on the mat"], vec!["the cat sat on the mat"]),
        ("no 4-gram match", vec!["a b c d"], vec!["a b c e"]),
        ("disjoint", vec!["x y z w"], vec!["a b c d"]),
        ("too short for 4-grams", vec!["a b c"], vec!["a b c"]),
        ("short hypothesis", vec!["a b c d"], vec!["a b c d e f g h"]),
        ("long hypothesis", vec!["a b c d e f g h"], vec!["a b c d"]),
        ("clipping", vec!["the the the the the the"], vec!["the cat is on the mat"]),
        ("repeated n-grams", vec!["a b a b a b a b"], vec!["a b a b c a b a b"]),
        ("two sentences", vec!["a b c d e", "f g h i j"], vec!["a b c d e", "f g h x j"]),
        ("corpus-level 4-gram", vec!["a b c d", "x y"], vec!["a b c d", "y x"]),
        ("word order", vec!["d c b a e f g h"], vec!["a b c d e f g h"]),
        ("empty hypothesis line", vec!["", "a b c d e"], vec!["a b", "a b c d e"]),
        ("empty reference line", vec!["a b c d", "q"], vec!["a b c d", ""]),
        ("partial overlap", vec!["on the mat the cat sat"], vec!["the cat sat on the mat"]),
        (
            "three lines",
            vec!["he saw the red house today", "she bought a book", "they sold it"],
            vec!["he saw the big house today", "she bought a new book", "they sold it again"],
        ),
        ("punctuation tokens", vec!["hello , world !"], vec!["hello , world ."]),
        ("case sensitive", vec!["A b c d e"], vec!["a b c d e"]),
        ("one token each", vec!["a", "b", "c", "d e f g"], vec!["a", "b", "c", "d e f g"]),
        ("long sentence", vec!["a b c d e f g h i j k l m n o p"], vec!["a b c d e f g h i j k l m n o q"]),
        (
            "mixed lengths",
            vec!["x a b c d", "a b c d e f", "g"],
            vec!["a b c d", "a b c d e g", "g h"],
        ),
        ("extra words", vec!["a b c d e f"], vec!["a b z c d e f"]),
    ]
}

/// Prefix-keyed next-token table with random log-probabilities over
/// `vocab` ids; PAD and BOS are never generated.
pub struct RandomTable {
    pub vocab: usize,
    pub seed: u64,
}

impl RandomTable {
    fn dist(&self, prefix: &[u32]) -> Vec<f64> {
        let mut h = self.seed;
        for &t in prefix {
            h = h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1);
        }
        let mut r = rng(h.wrapping_add(prefix.len() as u64 * 7919));
        let mut logits: Vec<f64> = (0..self.vocab).map(|_| r.gen_range(-3.0..3.0)).collect();
        logits[PAD as usize] = f64::NEG_INFINITY;
        logits[BOS as usize] = f64::NEG_INFINITY;
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
        logits.iter().map(|x| x - z).collect()
    }
}

impl StepModel for RandomTable {
    type State = Vec<u32>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn start(&self) -> (Vec<u32>, Vec<f64>) {
        (Vec::new(), self.dist(&[]))
    }

    fn advance(&self, s: &mut Vec<u32>, t: u32) -> Vec<f64> {
        s.push(t);
        self.dist(s)
    }
}

/// Best finished sequence of at most `max_len` steps by enumeration:
/// `(tokens, log_prob)`.
pub fn exhaustive_best<M: StepModel>(model: &M, max_len: usize) -> (Vec<u32>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let (s0, lp0) = model.start();
    let mut frontier = vec![(Vec::<u32>::new(), 0.0, s0, lp0)];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (toks, score, state, lp) in frontier {
            for (t, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let t = t as u32;
                if t == PAD || t == BOS {
                    continue;
                }
                if t == EOS {
                    if score + l > best.1 {
                        best = (toks.clone(), score + l);
                    }
                } else {
                    let mut st = state.clone();
                    let nl = model.advance(&mut st, t);
                    let mut tk = toks.clone();
                    tk.push(t);
                    next.push((tk, score + l, st, nl));
                }
            }
        }
        frontier = next;
    }
    best
}

/// Generatable ids of a vocabulary: everything except PAD and BOS.
pub fn generatable(vocab: usize) -> usize {
    vocab - 2
}

/// Outcome of the decoding oracles over many random models.
#[derive(Debug, Default)]
pub struct DecodeSummary {
    pub models: usize,
    pub exhaustive_mismatches: usize,
    pub greedy_mismatches: usize,
    pub max_score_gap: f64,
}

/// Wide beam vs enumeration, beam 1 vs greedy, and decoded log-probs vs
/// teacher-forced scores, on random tables and tiny Transformers.
pub fn decoding_oracles(seed: u64, models: usize) -> DecodeSummary {
    let mut r = rng(seed);
    let mut s = DecodeSummary::default();
    for i in 0..models {
        let max_len = r.gen_range(1..=5);
        let (beam_best, exact, g1, b1) = if i % 2 == 0 {
            let vocab = 6;
            let m = RandomTable { vocab, seed: r.gen() };
            let width = generatable(vocab).pow(max_len as u32);
            (
                beam_search(&m, BeamConfig::new(width, max_len)),
                exhaustive_best(&m, max_len),
                greedy(&m, max_len),
                beam_search(&m, BeamConfig::new(1, max_len)),
            )
        } else {
            let vocab = 6;
            let mut model = Transformer::init(tiny_config(vocab, i % 4 == 1), &mut r).unwrap();
            for t in model.params.values_mut() {
                t.data_mut().iter_mut().for_each(|x| *x *= 3.0);
            }
            let src: Vec<u32> = (0..r.gen_range(1..4)).map(|_| r.gen_range(3..vocab as u32)).collect();
            let dec = IncrementalDecoder::new(&model, &src).unwrap();
            let width = generatable(vocab).pow(max_len as u32);
            let wide = beam_search(&dec, BeamConfig::new(width, max_len));
            let exact = exhaustive_best(&dec, max_len);
            let g = greedy(&dec, max_len);
            let b = beam_search(&dec, BeamConfig::new(1, max_len));
            for d in [&wide, &g, &b] {
                if d.finished {
                    let sc = model.score(&src, &d.tokens).unwrap();
                    s.max_score_gap = s.max_score_gap.max((sc - d.log_prob).abs());
                }
            }
            let sc = model.score(&src, &exact.0).unwrap();
            s.max_score_gap = s.max_score_gap.max((sc - exact.1).abs());
            (wide, exact, g, b)
        };
        s.models += 1;
        if beam_best.tokens != exact.0 || (beam_best.log_prob - exact.1).abs() > 1e-9 {
            s.exhaustive_mismatches += 1;
        }
        if g1 != b1 {
            s.greedy_mismatches += 1;
        }
    }
    s
}

/// Step model that reproduces a fixed sequence and then stops.
pub struct Echo {
    pub target: Vec<u32>,
    pub vocab: usize,
}

impl StepModel for Echo {
    type State = usize;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn start(&self) -> (usize, Vec<f64>) {
        (0, self.dist(0))
    }

    fn advance(&self, pos: &mut usize, _token: u32) -> Vec<f64> {
        *pos += 1;
        self.dist(*pos)
    }
}

impl Echo {
    fn dist(&self, pos: usize) -> Vec<f64> {
        let mut lp = vec![f64::NEG_INFINITY; self.vocab];
        lp[self.target.get(pos).copied().unwrap_or(EOS) as usize] = 0.0;
        lp
    }
}

/// Translator that copies its input through the real search routines.
pub struct CopyModel {
    pub vocab: usize,
}

impl docrepair::synth::Translator for CopyModel {
    fn beam(&self, src: &[u32], beam: usize) -> Result<docrepair::model::Decoded, docrepair::model::ModelError> {
        let m = Echo {
            target: src.to_vec(),
            vocab: self.vocab,
        };
        Ok(beam_search(&m, BeamConfig::new(beam, src.len() + 8)))
    }

    fn sample(
        &self,
        src: &[u32],
        temperature: f64,
        rng: &mut dyn rand::RngCore,
    ) -> Result<docrepair::model::Decoded, docrepair::model::ModelError> {
        let m = Echo {
            target: src.to_vec(),
            vocab: self.vocab,
        };
        Ok(docrepair::model::sample(&m, temperature, src.len() + 8, rng))
    }
}

/// Synthesis invariant measurements.
#[derive(Debug)]
pub struct SynthSummary {
    pub pool_entries: usize,
    pub wrong_cardinality: usize,
    pub examples: usize,
    pub wrong_separator_count: usize,
    pub noise_positions: usize,
    pub noise_rate: f64,
    pub copy_mismatches: usize,
}

fn count_sep(ids: &[u32]) -> usize {
    ids.iter().filter(|&&t| t == docrepair::tokenize::SEP).count()
}

/// Pools from a random tiny Transformer, examples of `k` sentences, the
/// noise attempt rate over `positions` tokens, and copy-model round trips.
pub fn synthesis_invariants(seed: u64, n: usize, k: usize, positions: usize) -> SynthSummary {
    use docrepair::synth::{assemble_example, noise_tokens_counted, round_trip, Provenance, SamplePool};
    let mut r = rng(seed);
    let vocab = 12;
    let model = Transformer::init(tiny_config(vocab, true), &mut r).unwrap();
    let docs: Vec<(String, Vec<Vec<u32>>)> = (0..3)
        .map(|d| {
            let sents = (0..k + 2)
                .map(|_| (0..r.gen_range(1..5)).map(|_| r.gen_range(5..vocab as u32)).collect())
                .collect();
            (format!("doc{d}"), sents)
        })
        .collect();
    let mut pool = SamplePool::new(n, Provenance::RoundTrip);
    for (id, sents) in &docs {
        round_trip(id, sents, &model, &model, n, 0.5, seed, &mut pool).unwrap();
    }
    let wrong_cardinality = pool.entries.values().filter(|e| e.samples.len() != n).count();
    let (mut examples, mut wrong_sep) = (0, 0);
    for (id, sents) in &docs {
        for start in 0..=sents.len() - k {
            let ex = assemble_example(id, start, &sents[start..start + k], &pool, 0.1, vocab, &mut r).unwrap();
            examples += 1;
            if count_sep(&ex.input) != k - 1 || count_sep(&ex.target) != k - 1 {
                wrong_sep += 1;
            }
        }
    }
    let ids: Vec<u32> = (0..positions).map(|_| r.gen_range(5..vocab as u32)).collect();
    let (_, attempts) = noise_tokens_counted(&ids, 0.1, vocab, &mut r);

    let copy = CopyModel { vocab };
    let mut copy_pool = SamplePool::new(n, Provenance::RoundTrip);
    let mut copy_mismatches = 0;
    for (id, sents) in &docs {
        round_trip(id, sents, &copy, &copy, n, 0.5, seed, &mut copy_pool).unwrap();
        for (i, s) in sents.iter().enumerate() {
            let e = copy_pool.get(id, i).unwrap();
            copy_mismatches += e.samples.iter().filter(|x| *x != s).count() + usize::from(&e.back_translation != s);
        }
    }
    SynthSummary {
        pool_entries: pool.entries.len(),
        wrong_cardinality,
        examples,
        wrong_separator_count: wrong_sep,
        noise_positions: positions,
        noise_rate: attempts as f64 / positions as f64,
        copy_mismatches,
    }
}

/// Contrastive evaluator measurements.
#[derive(Debug)]
pub struct ContrastiveSummary {
    pub oracle_accuracy: f64,
    pub random_accuracy: f64,
    pub candidates: usize,
    pub rows_sum_to_totals: bool,
}

/// Oracle and random scorers on `instances` synthetic instances with
/// `m - 1` contrastive candidates each.
pub fn contrastive_oracles(seed: u64, instances: usize, m: usize) -> ContrastiveSummary {
    use docrepair::eval::{contrastive_accuracy, ContrastiveInstance, Phenomenon};
    let mut r = rng(seed);
    let suite: Vec<ContrastiveInstance> = (0..instances)
        .map(|i| ContrastiveInstance {
            source: vec![format!("s{i}"), format!("t{i}")],
            context: vec![format!("c{i}")],
            true_: vec![format!("true{i}")],
            contrastive: (1..m).map(|j| vec![format!("false{i}-{j}")]).collect(),
            phenomenon: Phenomenon::ALL[i % Phenomenon::ALL.len()],
            distance: if i % 5 == 0 { None } else { Some(r.gen_range(1..4)) },
        })
        .collect();
    let oracle = contrastive_accuracy(&suite, |_, g| if g[1].starts_with("true") { 1.0 } else { 0.0 }).unwrap();
    let random = contrastive_accuracy(&suite, |_, _| r.gen::<f64>()).unwrap();
    let rows_sum_to_totals = oracle.by_phenomenon.iter().all(|(p, t)| {
        let rows = &random.by_distance[p];
        rows.values().map(|x| x.total).sum::<usize>() == t.total
            && random.by_distance[p].values().map(|x| x.correct).sum::<usize>() == random.by_phenomenon[p].correct
    }) && oracle.by_phenomenon.values().map(|t| t.total).sum::<usize>() == instances;
    ContrastiveSummary {
        oracle_accuracy: oracle.overall.accuracy(),
        random_accuracy: random.overall.accuracy(),
        candidates: m,
        rows_sum_to_totals,
    }
}
