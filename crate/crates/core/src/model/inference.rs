//! Incremental decoding with cached self-attention keys and values.
//!
//! This path re-derives the decoder computation row by row with the same
//! kernels as the graph forward pass; tests hold the two routes to each
//! other.

use std::sync::Arc;

use super::decode::StepModel;
use super::transformer::{encoder_input, Transformer, NORM_EPS};
use super::ModelError;
use crate::numerics::kernels;
use crate::tokenize::{BOS, PAD};

struct AttnWeights<'a> {
    wq: &'a [f64],
    bq: &'a [f64],
    wk: &'a [f64],
    bk: &'a [f64],
    wv: &'a [f64],
    bv: &'a [f64],
    wo: &'a [f64],
    bo: &'a [f64],
}

struct Norm<'a> {
    gain: &'a [f64],
    bias: &'a [f64],
}

struct LayerWeights<'a> {
    self_attn: AttnWeights<'a>,
    norm1: Norm<'a>,
    cross_attn: AttnWeights<'a>,
    norm2: Norm<'a>,
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    norm3: Norm<'a>,
}

fn attn_weights<'a>(m: &'a Transformer, prefix: &str) -> AttnWeights<'a> {
    let p = |n: &str| m.params[&format!("{prefix}.{n}")].data();
    AttnWeights {
        wq: p("wq"),
        bq: p("bq"),
        wk: p("wk"),
        bk: p("bk"),
        wv: p("wv"),
        bv: p("bv"),
        wo: p("wo"),
        bo: p("bo"),
    }
}

fn norm<'a>(m: &'a Transformer, prefix: &str) -> Norm<'a> {
    Norm {
        gain: m.params[&format!("{prefix}.gain")].data(),
        bias: m.params[&format!("{prefix}.bias")].data(),
    }
}

/// Encoder output projected into per-layer cross-attention keys/values.
pub struct EncoderMemory {
    rows: usize,
    key_mask: Vec<bool>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

/// Per-hypothesis decoding state.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pos: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl DecoderState {
    /// Number of decoder inputs consumed so far (BOS included).
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// A [`StepModel`] over a fixed source sentence.
pub struct IncrementalDecoder<'a> {
    model: &'a Transformer,
    layers: Vec<LayerWeights<'a>>,
    memory: Arc<EncoderMemory>,
}

fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, k: usize, n: usize) -> Vec<f64> {
    let mut y = kernels::matmul(x, w, rows, k, n);
    for chunk in y.chunks_mut(n) {
        kernels::add_in_place(chunk, b);
    }
    y
}

fn layer_norm(x: &[f64], n: &Norm) -> Vec<f64> {
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    kernels::layer_norm_row(x, n.gain, n.bias, NORM_EPS, &mut xhat, &mut out);
    out
}

/// Attention of one query row over `rows` cached key/value rows.
fn attend(q: &[f64], keys: &[f64], values: &[f64], rows: usize, heads: usize, mask: Option<&[bool]>) -> Vec<f64> {
    let d = q.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; d];
    let mut scores = Vec::with_capacity(rows);
    for h in 0..heads {
        let c = h * dh..(h + 1) * dh;
        scores.clear();
        for r in 0..rows {
            if mask.is_some_and(|m| m[r]) {
                scores.push(f64::NEG_INFINITY);
            } else {
                scores.push(kernels::dot(&q[c.clone()], &keys[r * d + c.start..r * d + c.end]) * scale);
            }
        }
        kernels::softmax_in_place(&mut scores);
        for (r, &p) in scores.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &v) in out[c.clone()].iter_mut().zip(&values[r * d + c.start..r * d + c.end]) {
                *o += p * v;
            }
        }
    }
    out
}

impl<'a> IncrementalDecoder<'a> {
    /// Encodes `src` (EOS appended) and prepares cross-attention caches.
    pub fn new(model: &'a Transformer, src: &[u32]) -> Result<Self, ModelError> {
        let input = encoder_input(src);
        let memory = model.encode(src)?;
        let d = model.config.model_dim;
        let rows = input.len();
        let layers: Vec<LayerWeights<'a>> = (0..model.config.num_layers)
            .map(|l| LayerWeights {
                self_attn: attn_weights(model, &format!("dec.{l}.self_attn")),
                norm1: norm(model, &format!("dec.{l}.norm1")),
                cross_attn: attn_weights(model, &format!("dec.{l}.cross_attn")),
                norm2: norm(model, &format!("dec.{l}.norm2")),
                w1: model.params[&format!("dec.{l}.ff.w1")].data(),
                b1: model.params[&format!("dec.{l}.ff.b1")].data(),
                w2: model.params[&format!("dec.{l}.ff.w2")].data(),
                b2: model.params[&format!("dec.{l}.ff.b2")].data(),
                norm3: norm(model, &format!("dec.{l}.norm3")),
            })
            .collect();
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for lw in &layers {
            let a = &lw.cross_attn;
            keys.push(linear(memory.data(), a.wk, a.bk, rows, d, d));
            values.push(linear(memory.data(), a.wv, a.bv, rows, d, d));
        }
        Ok(Self {
            model,
            layers,
            memory: Arc::new(EncoderMemory {
                rows,
                key_mask: input.iter().map(|&id| id == PAD).collect(),
                keys,
                values,
            }),
        })
    }

    pub fn model(&self) -> &Transformer {
        self.model
    }

    /// Feeds one decoder input token and returns the next-token logits.
    pub fn step_logits(&self, state: &mut DecoderState, token: u32) -> Vec<f64> {
        let cfg = &self.model.config;
        let d = cfg.model_dim;
        let h = cfg.num_heads;
        let f = cfg.ff_dim;
        let pos = state.pos.min(cfg.max_positions - 1);
        let emb = &self.model.params["tgt_embed"].data()[token as usize * d..(token as usize + 1) * d];
        let scale = (d as f64).sqrt();
        let mut x: Vec<f64> = emb.iter().map(|v| v * scale).collect();
        kernels::add_in_place(&mut x, self.model.position_row(pos));
        let mem = &self.memory;
        for (l, lw) in self.layers.iter().enumerate() {
            let a = &lw.self_attn;
            let q = linear(&x, a.wq, a.bq, 1, d, d);
            state.keys[l].extend(linear(&x, a.wk, a.bk, 1, d, d));
            state.values[l].extend(linear(&x, a.wv, a.bv, 1, d, d));
            let ctx = attend(&q, &state.keys[l], &state.values[l], state.pos + 1, h, None);
            let o = linear(&ctx, a.wo, a.bo, 1, d, d);
            let mut r = x.clone();
            kernels::add_in_place(&mut r, &o);
            x = layer_norm(&r, &lw.norm1);

            let c = &lw.cross_attn;
            let q = linear(&x, c.wq, c.bq, 1, d, d);
            let ctx = attend(&q, &mem.keys[l], &mem.values[l], mem.rows, h, Some(&mem.key_mask));
            let o = linear(&ctx, c.wo, c.bo, 1, d, d);
            let mut r = x.clone();
            kernels::add_in_place(&mut r, &o);
            x = layer_norm(&r, &lw.norm2);

            let mut hidden = linear(&x, lw.w1, lw.b1, 1, d, f);
            hidden.iter_mut().for_each(|v| *v = v.max(0.0));
            let o = linear(&hidden, lw.w2, lw.b2, 1, f, d);
            let mut r = x.clone();
            kernels::add_in_place(&mut r, &o);
            x = layer_norm(&r, &lw.norm3);
        }
        state.pos += 1;
        let table = self.model.output_table().data();
        (0..cfg.tgt_vocab_size)
            .map(|v| kernels::dot(&x, &table[v * d..(v + 1) * d]))
            .collect()
    }

    fn log_probs(logits: &[f64]) -> Vec<f64> {
        let mut lp = vec![0.0; logits.len()];
        kernels::log_softmax(logits, &mut lp);
        lp
    }
}

impl StepModel for IncrementalDecoder<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.model.config.tgt_vocab_size
    }

    fn start(&self) -> (DecoderState, Vec<f64>) {
        let layers = self.model.config.num_layers;
        let mut state = DecoderState {
            pos: 0,
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
        };
        let logits = self.step_logits(&mut state, BOS);
        (state, Self::log_probs(&logits))
    }

    fn advance(&self, state: &mut DecoderState, token: u32) -> Vec<f64> {
        let logits = self.step_logits(state, token);
        Self::log_probs(&logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{beam_search, greedy, BeamConfig, TransformerConfig};
    use crate::tokenize::EOS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64, tie: bool) -> Transformer {
        let cfg = TransformerConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            ff_dim: 12,
            max_positions: 32,
            tie_embeddings: tie,
            ..TransformerConfig::desk(11, 9)
        };
        Transformer::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn incremental_matches_full_forward() {
        for (seed, tie) in [(1, true), (2, false)] {
            let m = tiny(seed, tie);
            let src = [5, 6, 7];
            let tgt_in = [BOS, 5, 8, 6, 7];
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let full = m.forward(&encoder_input(&src), &tgt_in, false, &mut rng).unwrap();
            let dec = IncrementalDecoder::new(&m, &src).unwrap();
            let mut st = DecoderState {
                pos: 0,
                keys: vec![Vec::new(); 2],
                values: vec![Vec::new(); 2],
            };
            for (i, &t) in tgt_in.iter().enumerate() {
                let row = dec.step_logits(&mut st, t);
                for (a, b) in row.iter().zip(&full.data()[i * 9..(i + 1) * 9]) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn decoded_scores_agree_with_forced_scoring() {
        for seed in 0..5 {
            let m = tiny(seed, true);
            let src = [5, 9, 10];
            let dec = IncrementalDecoder::new(&m, &src).unwrap();
            for d in [greedy(&dec, 10), beam_search(&dec, BeamConfig::new(4, 10))] {
                if d.finished {
                    assert!((m.score(&src, &d.tokens).unwrap() - d.log_prob).abs() < 1e-9);
                    assert!(!d.tokens.contains(&EOS));
                }
            }
        }
    }
}
