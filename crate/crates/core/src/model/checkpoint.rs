//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "DRCKPT\0\0"
//! version      u32       1
//! header_len   u64
//! header       JSON      { config, training_step, optimizer_step,
//!                          src_vocab, tgt_vocab,
//!                          tensors: [{ name, shape, section }] }
//! blocks       f64 LE    one block per header tensor, in header order
//! ```
//!
//! `section` is `param`, `adam_m` or `adam_v`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, Transformer, TransformerConfig};
use crate::numerics::{AdamState, Tensor, TensorMap};

pub const MAGIC: &[u8; 8] = b"DRCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// A model snapshot with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TransformerConfig,
    pub params: TensorMap,
    pub optimizer: AdamState,
    pub training_step: u64,
    /// Source/target vocabulary fingerprints.
    pub src_vocab: String,
    pub tgt_vocab: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    section: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TransformerConfig,
    training_step: u64,
    optimizer_step: u64,
    src_vocab: String,
    tgt_vocab: String,
    tensors: Vec<TensorEntry>,
}

fn fmt(msg: impl Into<String>) -> ModelError {
    ModelError::Format(msg.into())
}

impl Checkpoint {
    pub fn new(model: &Transformer, src_vocab: &str, tgt_vocab: &str) -> Self {
        Self {
            config: model.config.clone(),
            params: model.params.clone(),
            optimizer: AdamState::new(),
            training_step: 0,
            src_vocab: src_vocab.to_string(),
            tgt_vocab: tgt_vocab.to_string(),
        }
    }

    pub fn model(&self) -> Result<Transformer, ModelError> {
        Transformer::new(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let sections = [
            ("param", &self.params),
            ("adam_m", &self.optimizer.m),
            ("adam_v", &self.optimizer.v),
        ];
        let mut tensors = Vec::new();
        for (section, map) in sections {
            for (name, t) in map {
                tensors.push(TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    section: section.to_string(),
                });
            }
        }
        let header = Header {
            config: self.config.clone(),
            training_step: self.training_step,
            optimizer_step: self.optimizer.step,
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| fmt(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, map) in sections {
            for t in map.values() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(fmt(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(fmt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| fmt(e.to_string()))?;
        let mut data = &body[hlen..];
        let mut params = TensorMap::new();
        let mut optimizer = AdamState {
            step: header.optimizer_step,
            ..AdamState::new()
        };
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < n * 8 {
                return Err(fmt(format!("truncated tensor {}", entry.name)));
            }
            let values = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[n * 8..];
            let t = Tensor::new(entry.shape, values)?;
            let map = match entry.section.as_str() {
                "param" => &mut params,
                "adam_m" => &mut optimizer.m,
                "adam_v" => &mut optimizer.v,
                other => return Err(fmt(format!("unknown section {other}"))),
            };
            if map.insert(entry.name.clone(), t).is_some() {
                return Err(fmt(format!("duplicate tensor {}", entry.name)));
            }
        }
        if !data.is_empty() {
            return Err(fmt(format!("{} trailing bytes", data.len())));
        }
        let ck = Self {
            config: header.config,
            params,
            optimizer,
            training_step: header.training_step,
            src_vocab: header.src_vocab,
            tgt_vocab: header.tgt_vocab,
        };
        ck.model()?;
        Ok(ck)
    }

    /// Writes to a temporary sibling and renames into place.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Element-wise mean of parameters, summed in sorted order per coordinate;
/// coordinates equal across inputs are copied exactly.
/// Optimizer state and step come from the checkpoint with the largest
/// training step.
pub fn average_checkpoints(cks: &[Checkpoint]) -> Result<Checkpoint, ModelError> {
    let first = cks
        .first()
        .ok_or_else(|| ModelError::Input("no checkpoints to average".into()))?;
    for c in &cks[1..] {
        if c.config != first.config {
            return Err(ModelError::Schema("checkpoint configs differ".into()));
        }
        if c.src_vocab != first.src_vocab || c.tgt_vocab != first.tgt_vocab {
            return Err(ModelError::Schema("checkpoint vocabularies differ".into()));
        }
        if c.params.len() != first.params.len()
            || c.params.iter().any(|(k, t)| first.params.get(k).map(Tensor::shape) != Some(t.shape()))
        {
            return Err(ModelError::Schema("checkpoint parameter schemas differ".into()));
        }
    }
    let latest = cks
        .iter()
        .max_by_key(|c| c.training_step)
        .expect("non-empty");
    let k = cks.len() as f64;
    let mut params = TensorMap::new();
    for (name, t) in &first.params {
        let mut sum = vec![0.0; t.len()];
        let parts: Vec<&[f64]> = cks.iter().map(|c| c.params[name].data()).collect();
        let mut col = Vec::with_capacity(parts.len());
        for (i, s) in sum.iter_mut().enumerate() {
            col.clear();
            col.extend(parts.iter().map(|p| p[i]));
            col.sort_by(f64::total_cmp);
            *s = if col[0] == col[col.len() - 1] {
                col[0]
            } else {
                col.iter().sum::<f64>() / k
            };
        }
        params.insert(name.clone(), Tensor::new(t.shape().to_vec(), sum)?);
    }
    Ok(Checkpoint {
        params,
        ..latest.clone()
    })
}
