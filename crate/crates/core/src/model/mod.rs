//! Transformer encoder-decoder: training forward pass, incremental decoding,
//! beam search, sampling, forced scoring and checkpoints.

mod checkpoint;
mod config;
mod decode;
mod inference;
mod params;
mod train;
mod transformer;

pub use checkpoint::{average_checkpoints, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::TransformerConfig;
pub use decode::{beam_search, default_max_len, greedy, sample, sample_token, BeamConfig, Decoded, Masked, StepModel};
pub use inference::{DecoderState, IncrementalDecoder};
pub use params::{check_schema, init_params, param_schema, sinusoidal_positions};
pub use train::{batch_loss, train_step, StepReport};
pub use transformer::{decoder_io, encoder_input, ParamVars, SeqPair, Transformer};

use rand::RngCore;

use crate::numerics::NumericsError;
use crate::tokenize::SEP;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parameter schema: {0}")]
    Schema(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Transformer {
    /// Beam search translation of a raw source sentence.
    pub fn translate(&self, src: &[u32], beam: usize) -> Result<Decoded, ModelError> {
        let dec = IncrementalDecoder::new(self, src)?;
        Ok(beam_search(&dec, BeamConfig::new(beam, self.max_len(src.len()))))
    }

    /// Beam search translation of one sentence; the group separator is
    /// never produced.
    pub fn translate_sentence(&self, src: &[u32], beam: usize) -> Result<Decoded, ModelError> {
        let dec = IncrementalDecoder::new(self, src)?;
        let masked = Masked {
            inner: &dec,
            banned: &[SEP],
        };
        Ok(beam_search(&masked, BeamConfig::new(beam, self.max_len(src.len()))))
    }

    /// Temperature sample of one sentence's translation, without separators.
    pub fn sample_sentence(&self, src: &[u32], temperature: f64, rng: &mut dyn RngCore) -> Result<Decoded, ModelError> {
        let dec = IncrementalDecoder::new(self, src)?;
        let masked = Masked {
            inner: &dec,
            banned: &[SEP],
        };
        Ok(sample(&masked, temperature, self.max_len(src.len()), rng))
    }

    /// Default output budget, capped by the position table.
    pub fn max_len(&self, src_len: usize) -> usize {
        default_max_len(src_len).min(self.config.max_positions - 1)
    }
}
