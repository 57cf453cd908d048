//! AdamW with decoupled weight decay and bias correction.

use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::tensor::ParamStore;
use crate::error::{Error, Result};

/// Storage precision for parameters and moment buffers between steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Values are rounded through `f32` after every update.
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub precision: Precision,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.1,
            max_grad_norm: Some(1.0),
            precision: Precision::F32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = |t: &super::tensor::Tensor| Mat::zeros(t.value().rows(), t.value().cols());
        OptimizerState {
            config,
            step: 0,
            m: store.tensors().iter().map(zeros).collect(),
            v: store.tensors().iter().map(zeros).collect(),
        }
    }
}

/// One AdamW update of every trainable parameter using its `.grad`.
///
/// Gradients are clipped first when `max_grad_norm` is set, then cleared.
pub fn adamw_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Optimizer(format!(
            "state tracks {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for (_, t) in store.iter() {
        if t.requires_grad && t.grad.is_none() {
            return Err(Error::Optimizer(format!("no gradient for `{}`", t.name)));
        }
    }
    if let Some(max) = state.config.max_grad_norm {
        store.clip_grad_norm(max);
    }
    state.step += 1;
    let cfg = state.config.clone();
    let bc1 = 1.0 - cfg.beta1.powf(state.step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(state.step as f64);
    let round = cfg.precision == Precision::F32;
    for (id, t) in store.iter_mut() {
        if !t.requires_grad {
            continue;
        }
        let grad = t.grad.take().expect("checked above");
        if grad.shape() != t.value().shape() {
            return Err(Error::Optimizer(format!(
                "gradient shape {:?} for `{}` of shape {:?}",
                grad.shape(),
                t.name,
                t.value().shape()
            )));
        }
        let decay = if t.decay { cfg.weight_decay } else { 0.0 };
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let w = t.value_mut().data_mut();
        for i in 0..w.len() {
            let g = grad.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] = w[i] * (1.0 - lr * decay) - lr * m_hat / (v_hat.sqrt() + cfg.eps);
            if round {
                w[i] = w[i] as f32 as f64;
                m[i] = m[i] as f32 as f64;
                v[i] = v[i] as f32 as f64;
            }
        }
    }
    Ok(())
}
