//! Parameter naming scheme and initialization.

use rand::Rng;

use super::{ModelError, TransformerConfig};
use crate::numerics::{Tensor, TensorMap};

/// Every parameter implied by `cfg`, with its shape, in a fixed order.
pub fn param_schema(cfg: &TransformerConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.model_dim;
    let f = cfg.ff_dim;
    let mut s: Vec<(String, Vec<usize>)> = vec![
        ("src_embed".into(), vec![cfg.src_vocab_size, d]),
        ("tgt_embed".into(), vec![cfg.tgt_vocab_size, d]),
    ];
    if !cfg.tie_embeddings {
        s.push(("out_proj".into(), vec![cfg.tgt_vocab_size, d]));
    }
    let attn = |s: &mut Vec<(String, Vec<usize>)>, p: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            s.push((format!("{p}.{w}"), vec![d, d]));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            s.push((format!("{p}.{b}"), vec![d]));
        }
    };
    let norm = |s: &mut Vec<(String, Vec<usize>)>, p: &str| {
        s.push((format!("{p}.gain"), vec![d]));
        s.push((format!("{p}.bias"), vec![d]));
    };
    let ff = |s: &mut Vec<(String, Vec<usize>)>, p: &str| {
        s.push((format!("{p}.w1"), vec![d, f]));
        s.push((format!("{p}.b1"), vec![f]));
        s.push((format!("{p}.w2"), vec![f, d]));
        s.push((format!("{p}.b2"), vec![d]));
    };
    for l in 0..cfg.num_layers {
        attn(&mut s, &format!("enc.{l}.self_attn"));
        norm(&mut s, &format!("enc.{l}.norm1"));
        ff(&mut s, &format!("enc.{l}.ff"));
        norm(&mut s, &format!("enc.{l}.norm2"));
    }
    for l in 0..cfg.num_layers {
        attn(&mut s, &format!("dec.{l}.self_attn"));
        norm(&mut s, &format!("dec.{l}.norm1"));
        attn(&mut s, &format!("dec.{l}.cross_attn"));
        norm(&mut s, &format!("dec.{l}.norm2"));
        ff(&mut s, &format!("dec.{l}.ff"));
        norm(&mut s, &format!("dec.{l}.norm3"));
    }
    s
}

/// Xavier-uniform matrices, N(0, 1/d) embeddings, zero biases, unit gains.
pub fn init_params<R: Rng>(cfg: &TransformerConfig, rng: &mut R) -> TensorMap {
    let mut params = TensorMap::new();
    for (name, shape) in param_schema(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name.ends_with("embed") || name == "out_proj" {
            let std = (cfg.model_dim as f64).powf(-0.5);
            (0..n).map(|_| std * standard_normal(rng)).collect()
        } else if name.ends_with(".gain") {
            vec![1.0; n]
        } else if shape.len() == 2 {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
        } else {
            vec![0.0; n]
        };
        params.insert(name, Tensor::new(shape, data).expect("finite initial values"));
    }
    params
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; avoids ln(0) by sampling from (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Checks that `params` holds exactly the schema of `cfg`.
pub fn check_schema(cfg: &TransformerConfig, params: &TensorMap) -> Result<(), ModelError> {
    let schema = param_schema(cfg);
    if schema.len() != params.len() {
        return Err(ModelError::Schema(format!(
            "expected {} parameters, found {}",
            schema.len(),
            params.len()
        )));
    }
    for (name, shape) in schema {
        match params.get(&name) {
            None => return Err(ModelError::Schema(format!("missing parameter {name}"))),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(ModelError::Schema(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Fixed sinusoidal position encodings, `[positions, dim]` row-major.
pub fn sinusoidal_positions(positions: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; positions * dim];
    for pos in 0..positions {
        for i in 0..dim {
            let exponent = (2 * (i / 2)) as f64 / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            pe[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
