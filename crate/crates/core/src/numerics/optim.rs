use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor, TensorMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warmup_steps: u64,
    pub scale: f64,
}

impl Default for OptimizerConfig {
    /// Transformer-base settings: β1 = 0.9, β2 = 0.98, ε = 1e-9, 16000
    /// warmup steps, scale 4.
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            warmup_steps: 16000,
            scale: 4.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.warmup_steps >= 1
            && self.scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NumericsError::Domain(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// `scale · min(step^-0.5, step · warmup_steps^-1.5)`
pub fn lr_at(step: u64, cfg: &OptimizerConfig) -> Result<f64, NumericsError> {
    if step < 1 {
        return Err(NumericsError::Domain("learning rate requested for step 0".into()));
    }
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    Ok(cfg.scale * f64::min(s.powf(-0.5), s * w.powf(-1.5)))
}

/// First and second moment estimates plus the number of completed updates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: TensorMap,
    pub v: TensorMap,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update using `lr_at(state.step + 1)`.
///
/// A parameter whose gradient is absent or identically zero is left
/// untouched, moments included, so a zero gradient never moves weights.
/// Returns the learning rate that was applied.
pub fn adam_step(
    params: &mut TensorMap,
    grads: &TensorMap,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
) -> Result<f64, NumericsError> {
    cfg.validate()?;
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| NumericsError::Shape(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(NumericsError::Shape(format!(
                "{name}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(NumericsError::NonFinite(format!("gradient of {name}")));
        }
    }
    let t = state.step + 1;
    let lr = lr_at(t, cfg)?;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (name, g) in grads {
        if g.data().iter().all(|&x| x == 0.0) {
            continue;
        }
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
    state.step = t;
    Ok(lr)
}
