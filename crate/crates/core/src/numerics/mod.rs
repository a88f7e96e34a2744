//! Tensor arithmetic, reverse-mode differentiation, and the Adam optimizer
//! with warmup / inverse-square-root learning-rate decay.

mod graph;
pub mod kernels;
mod optim;
mod tensor;

use std::collections::BTreeMap;

pub use graph::{AttentionLayout, AttentionSegment, Graph, Var};
pub use optim::{adam_step, lr_at, AdamState, OptimizerConfig};
pub use tensor::Tensor;

/// Named parameter (or gradient, or moment) tensors in deterministic order.
pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("malformed operation record: {0}")]
    Graph(String),
}

/// Softmax along `axis`, computed with max-subtraction.
pub fn softmax(logits: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    let shape = logits.shape();
    if axis >= shape.len() {
        return Err(NumericsError::Shape(format!("axis {axis} out of range for shape {shape:?}")));
    }
    if !logits.is_finite() {
        return Err(NumericsError::NonFinite("softmax input".into()));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = logits.data().to_vec();
    let mut lane = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            for (j, x) in lane.iter_mut().enumerate() {
                *x = out[at(j)];
            }
            kernels::softmax_in_place(&mut lane);
            for (j, &x) in lane.iter().enumerate() {
                out[at(j)] = x;
            }
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

/// Layer normalization over the last axis.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor, NumericsError> {
    let mut g = Graph::new();
    let (xv, gv, bv) = (
        g.constant(x.clone()),
        g.constant(gain.clone()),
        g.constant(bias.clone()),
    );
    let out = g.layer_norm(xv, gv, bv, eps)?;
    Ok(g.value(out).clone())
}

/// Mean label-smoothed cross-entropy of `[positions, vocab]` logits against
/// target ids, skipping positions whose target equals `pad_id`.
pub fn cross_entropy(
    logits: &Tensor,
    targets: &[u32],
    label_smoothing: f64,
    pad_id: Option<u32>,
) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy(l, targets, label_smoothing, pad_id)?;
    Ok(g.value(loss).item())
}
