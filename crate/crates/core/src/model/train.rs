//! One optimization step over a batch of sentence pairs.

use rand::RngCore;

use super::transformer::{decoder_io, encoder_input, SeqPair};
use super::{ModelError, Transformer};
use crate::numerics::{adam_step, AdamState, Graph, OptimizerConfig, TensorMap};
use crate::tokenize::PAD;

/// Loss and learning rate of a completed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub lr: f64,
    pub tokens: usize,
}

/// Label-smoothed loss of `batch` without updating anything.
pub fn batch_loss(model: &Transformer, batch: &[SeqPair]) -> Result<f64, ModelError> {
    let (loss, _) = loss_and_grads(model, batch, None, false)?;
    Ok(loss)
}

fn loss_and_grads(
    model: &Transformer,
    batch: &[SeqPair],
    rng: Option<&mut dyn RngCore>,
    want_grads: bool,
) -> Result<(f64, TensorMap), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::Input("empty batch".into()));
    }
    let enc: Vec<Vec<u32>> = batch.iter().map(|p| encoder_input(&p.src)).collect();
    let io: Vec<(Vec<u32>, Vec<u32>)> = batch.iter().map(|p| decoder_io(&p.tgt)).collect();
    let enc_refs: Vec<&[u32]> = enc.iter().map(Vec::as_slice).collect();
    let in_refs: Vec<&[u32]> = io.iter().map(|(i, _)| i.as_slice()).collect();
    let targets: Vec<u32> = io.iter().flat_map(|(_, o)| o.iter().copied()).collect();
    let mut g = Graph::new();
    let p = model.bind(&mut g, want_grads);
    let logits = model.forward_graph(&mut g, &p, &enc_refs, &in_refs, rng)?;
    let loss = g.cross_entropy(logits, &targets, model.config.label_smoothing, Some(PAD))?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(ModelError::NonFiniteLoss(value));
    }
    let mut grads = TensorMap::new();
    if want_grads {
        g.backward(loss)?;
        for (name, var) in p.iter() {
            if let Some(t) = g.grad(*var) {
                grads.insert(name.clone(), t);
            }
        }
    }
    Ok((value, grads))
}

/// Forward with dropout, backward, and one Adam update at the scheduled
/// rate. A non-finite loss or gradient aborts before any parameter moves.
pub fn train_step(
    model: &mut Transformer,
    batch: &[SeqPair],
    adam: &mut AdamState,
    opt: &OptimizerConfig,
    rng: &mut dyn RngCore,
) -> Result<StepReport, ModelError> {
    let (loss, grads) = loss_and_grads(model, batch, Some(rng), true)?;
    let tokens = batch.iter().map(|p| p.tgt.len() + 1).sum();
    let lr = adam_step(&mut model.params, &grads, adam, opt)?;
    Ok(StepReport { loss, lr, tokens })
}
