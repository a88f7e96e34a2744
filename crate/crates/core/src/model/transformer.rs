use std::collections::HashMap;

use rand::{Rng, RngCore};

use super::params::{check_schema, init_params, sinusoidal_positions};
use super::{ModelError, TransformerConfig};
use crate::numerics::{kernels, AttentionLayout, AttentionSegment, Graph, Tensor, TensorMap, Var};
use crate::tokenize::{BOS, EOS, PAD};

pub(crate) const NORM_EPS: f64 = 1e-6;

/// A source/target training pair of raw sentence (or group) token ids,
/// without BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqPair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

/// Encoder input for a raw source sequence.
pub fn encoder_input(src: &[u32]) -> Vec<u32> {
    let mut v = src.to_vec();
    v.push(EOS);
    v
}

/// Decoder input (BOS-shifted) and output (EOS-terminated) for a target.
pub fn decoder_io(tgt: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(tgt.len() + 1);
    input.push(BOS);
    input.extend_from_slice(tgt);
    let mut output = tgt.to_vec();
    output.push(EOS);
    (input, output)
}

/// Encoder-decoder Transformer with post-norm residual blocks and fixed
/// sinusoidal positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub config: TransformerConfig,
    pub params: TensorMap,
    positions: Vec<f64>,
}

/// Graph handles for every parameter of one forward pass.
pub struct ParamVars(HashMap<String, Var>);

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.0[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }
}

impl Transformer {
    pub fn new(config: TransformerConfig, params: TensorMap) -> Result<Self, ModelError> {
        config.validate()?;
        check_schema(&config, &params)?;
        let positions = sinusoidal_positions(config.max_positions, config.model_dim);
        Ok(Self {
            config,
            params,
            positions,
        })
    }

    pub fn init<R: Rng>(config: TransformerConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let params = init_params(&config, rng);
        Self::new(config, params)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub(crate) fn position_row(&self, pos: usize) -> &[f64] {
        let d = self.config.model_dim;
        &self.positions[pos * d..(pos + 1) * d]
    }

    pub(crate) fn output_table(&self) -> &Tensor {
        if self.config.tie_embeddings {
            &self.params["tgt_embed"]
        } else {
            &self.params["out_proj"]
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        ParamVars(
            self.params
                .iter()
                .map(|(name, t)| (name.clone(), g.leaf(t.clone(), trainable)))
                .collect(),
        )
    }

    fn check_ids(&self, seqs: &[&[u32]], vocab: usize, side: &str) -> Result<(), ModelError> {
        for s in seqs {
            if s.is_empty() {
                return Err(ModelError::Input(format!("empty {side} sequence")));
            }
            if s.len() > self.config.max_positions {
                return Err(ModelError::Input(format!(
                    "{side} length {} exceeds max_positions {}",
                    s.len(),
                    self.config.max_positions
                )));
            }
            if let Some(&bad) = s.iter().find(|&&id| id as usize >= vocab) {
                return Err(ModelError::Input(format!(
                    "{side} id {bad} outside vocabulary of {vocab}"
                )));
            }
        }
        Ok(())
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut dyn RngCore>) -> Result<Var, ModelError> {
        let p = self.config.dropout;
        let Some(rng) = rng.as_mut() else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let shape = g.value(x).shape().to_vec();
        let mask: Vec<f64> = (0..g.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        Ok(g.mul(x, m)?)
    }

    fn embed(
        &self,
        g: &mut Graph,
        table: Var,
        seqs: &[&[u32]],
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        let d = self.config.model_dim;
        let ids: Vec<u32> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let mut pos = Vec::with_capacity(ids.len() * d);
        for s in seqs {
            for p in 0..s.len() {
                pos.extend_from_slice(self.position_row(p));
            }
        }
        let e = g.embedding(table, &ids)?;
        let e = g.scale(e, (d as f64).sqrt());
        let pos = g.constant(Tensor::new(vec![ids.len(), d], pos)?);
        let x = g.add(e, pos)?;
        self.dropout(g, x, rng)
    }

    fn linear(g: &mut Graph, p: &ParamVars, x: Var, w: &str, b: &str) -> Result<Var, ModelError> {
        let y = g.matmul(x, p.get(w))?;
        Ok(g.add_row(y, p.get(b))?)
    }

    fn attention_block(
        g: &mut Graph,
        p: &ParamVars,
        prefix: &str,
        xq: Var,
        xkv: Var,
        layout: AttentionLayout,
    ) -> Result<Var, ModelError> {
        let q = Self::linear(g, p, xq, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
        let k = Self::linear(g, p, xkv, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
        let v = Self::linear(g, p, xkv, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
        let a = g.attention(q, k, v, layout)?;
        Self::linear(g, p, a, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
    }

    fn residual_norm(
        &self,
        g: &mut Graph,
        p: &ParamVars,
        x: Var,
        sub: Var,
        norm: &str,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        let sub = self.dropout(g, sub, rng)?;
        let s = g.add(x, sub)?;
        Ok(g.layer_norm(s, p.get(&format!("{norm}.gain")), p.get(&format!("{norm}.bias")), NORM_EPS)?)
    }

    fn feed_forward(g: &mut Graph, p: &ParamVars, prefix: &str, x: Var) -> Result<Var, ModelError> {
        let h = Self::linear(g, p, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
        let h = g.relu(h);
        Self::linear(g, p, h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    fn segments(q: &[&[u32]], k: &[&[u32]]) -> Vec<AttentionSegment> {
        let (mut qs, mut ks) = (0, 0);
        q.iter()
            .zip(k)
            .map(|(a, b)| {
                let seg = AttentionSegment {
                    q_start: qs,
                    q_len: a.len(),
                    k_start: ks,
                    k_len: b.len(),
                };
                qs += a.len();
                ks += b.len();
                seg
            })
            .collect()
    }

    /// Encoder states for packed encoder inputs, `[total_src_rows, dim]`.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        p: &ParamVars,
        src: &[&[u32]],
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        self.check_ids(src, self.config.src_vocab_size, "source")?;
        let key_mask: Vec<bool> = src.iter().flat_map(|s| s.iter().map(|&id| id == PAD)).collect();
        let mut x = self.embed(g, p.get("src_embed"), src, rng)?;
        for l in 0..self.config.num_layers {
            let layout = AttentionLayout {
                heads: self.config.num_heads,
                segments: Self::segments(src, src),
                causal: false,
                key_mask: Some(key_mask.clone()),
            };
            let a = Self::attention_block(g, p, &format!("enc.{l}.self_attn"), x, x, layout)?;
            x = self.residual_norm(g, p, x, a, &format!("enc.{l}.norm1"), rng)?;
            let f = Self::feed_forward(g, p, &format!("enc.{l}.ff"), x)?;
            x = self.residual_norm(g, p, x, f, &format!("enc.{l}.norm2"), rng)?;
        }
        Ok(x)
    }

    /// Output logits `[total_tgt_rows, tgt_vocab]` for packed encoder inputs
    /// and BOS-shifted decoder inputs. Source PAD ids are masked as keys;
    /// dropout is active iff `rng` is given.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &ParamVars,
        src: &[&[u32]],
        tgt_in: &[&[u32]],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        if src.len() != tgt_in.len() || src.is_empty() {
            return Err(ModelError::Input(format!(
                "{} source and {} target sequences",
                src.len(),
                tgt_in.len()
            )));
        }
        self.check_ids(tgt_in, self.config.tgt_vocab_size, "target")?;
        let memory = self.encode_graph(g, p, src, &mut rng)?;
        let src_mask: Vec<bool> = src.iter().flat_map(|s| s.iter().map(|&id| id == PAD)).collect();
        let mut x = self.embed(g, p.get("tgt_embed"), tgt_in, &mut rng)?;
        for l in 0..self.config.num_layers {
            let self_layout = AttentionLayout {
                heads: self.config.num_heads,
                segments: Self::segments(tgt_in, tgt_in),
                causal: true,
                key_mask: None,
            };
            let a = Self::attention_block(g, p, &format!("dec.{l}.self_attn"), x, x, self_layout)?;
            x = self.residual_norm(g, p, x, a, &format!("dec.{l}.norm1"), &mut rng)?;
            let cross_layout = AttentionLayout {
                heads: self.config.num_heads,
                segments: Self::segments(tgt_in, src),
                causal: false,
                key_mask: Some(src_mask.clone()),
            };
            let c = Self::attention_block(g, p, &format!("dec.{l}.cross_attn"), x, memory, cross_layout)?;
            x = self.residual_norm(g, p, x, c, &format!("dec.{l}.norm2"), &mut rng)?;
            let f = Self::feed_forward(g, p, &format!("dec.{l}.ff"), x)?;
            x = self.residual_norm(g, p, x, f, &format!("dec.{l}.norm3"), &mut rng)?;
        }
        let out = if self.config.tie_embeddings {
            p.get("tgt_embed")
        } else {
            p.get("out_proj")
        };
        Ok(g.matmul_t(x, out)?)
    }

    /// Logits for one encoder input and one BOS-shifted decoder input, both
    /// used verbatim.
    pub fn forward(
        &self,
        src: &[u32],
        tgt_in: &[u32],
        train_mode: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let rng = if train_mode { Some(rng) } else { None };
        let logits = self.forward_graph(&mut g, &p, &[src], &[tgt_in], rng)?;
        g.check_finite()?;
        Ok(g.value(logits).clone())
    }

    /// Encoder states for one raw source sentence (EOS is appended).
    pub fn encode(&self, src: &[u32]) -> Result<Tensor, ModelError> {
        let input = encoder_input(src);
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let m = self.encode_graph(&mut g, &p, &[&input], &mut None)?;
        g.check_finite()?;
        Ok(g.value(m).clone())
    }

    /// Total log-probability of `tgt` followed by EOS given `src`, one value
    /// per pair, computed with teacher forcing.
    pub fn score_batch(&self, pairs: &[(&[u32], &[u32])]) -> Result<Vec<f64>, ModelError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let enc: Vec<Vec<u32>> = pairs.iter().map(|(s, _)| encoder_input(s)).collect();
        let io: Vec<(Vec<u32>, Vec<u32>)> = pairs.iter().map(|(_, t)| decoder_io(t)).collect();
        let enc_refs: Vec<&[u32]> = enc.iter().map(Vec::as_slice).collect();
        let in_refs: Vec<&[u32]> = io.iter().map(|(i, _)| i.as_slice()).collect();
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let logits = self.forward_graph(&mut g, &p, &enc_refs, &in_refs, None)?;
        g.check_finite()?;
        let v = self.config.tgt_vocab_size;
        let lv = g.value(logits).data();
        let mut lp = vec![0.0; v];
        let mut row = 0;
        let mut scores = Vec::with_capacity(pairs.len());
        for (_, out) in &io {
            let mut total = 0.0;
            for &t in out {
                kernels::log_softmax(&lv[row * v..(row + 1) * v], &mut lp);
                total += lp[t as usize];
                row += 1;
            }
            scores.push(total);
        }
        Ok(scores)
    }

    /// `score_batch` for a single pair.
    pub fn score(&self, src: &[u32], tgt: &[u32]) -> Result<f64, ModelError> {
        Ok(self.score_batch(&[(src, tgt)])?[0])
    }
}
