use serde::{Deserialize, Serialize};

use super::ModelError;

/// Encoder-decoder hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub max_positions: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    /// Share the target embedding matrix with the output projection.
    #[serde(default = "default_true")]
    pub tie_embeddings: bool,
}

fn default_true() -> bool {
    true
}

impl TransformerConfig {
    /// Small model that trains on a single CPU core.
    pub fn desk(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            num_heads: 2,
            model_dim: 64,
            ff_dim: 128,
            dropout: 0.1,
            label_smoothing: 0.1,
            max_positions: 256,
            src_vocab_size,
            tgt_vocab_size,
            tie_embeddings: true,
        }
    }

    /// Transformer-base: 6 layers, 8 heads, width 512, feed-forward 2048.
    pub fn base(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self {
            num_layers: 6,
            num_heads: 8,
            model_dim: 512,
            ff_dim: 2048,
            max_positions: 1024,
            ..Self::desk(src_vocab_size, tgt_vocab_size)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.num_layers,
            self.num_heads,
            self.model_dim,
            self.ff_dim,
            self.max_positions,
            self.src_vocab_size,
            self.tgt_vocab_size,
        ];
        if positive.contains(&0) {
            return Err(ModelError::Config(format!("all dimensions must be positive: {self:?}")));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(ModelError::Config(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ModelError::Config(format!(
                "label smoothing {} outside [0,1)",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TransformerConfig::desk(100, 120).validate().unwrap();
        let base = TransformerConfig::base(32000, 32000);
        base.validate().unwrap();
        assert_eq!((base.num_layers, base.num_heads, base.model_dim, base.ff_dim), (6, 8, 512, 2048));
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = TransformerConfig {
            num_heads: 3,
            ..TransformerConfig::desk(10, 10)
        };
        assert!(cfg.validate().is_err());
        let cfg = TransformerConfig {
            dropout: 1.0,
            ..TransformerConfig::desk(10, 10)
        };
        assert!(cfg.validate().is_err());
    }
}
