use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Parameter;
use crate::tensor::Tensor;

/// Precision in which parameters and optimizer moments are stored between
/// steps. Arithmetic is always `f64`; `F32` rounds after every update so
/// that checkpoints (which store `f32`) capture the state exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// One bias-corrected Adam update of every parameter from its `grad`.
pub fn adam_step(
    params: &mut [&mut Parameter],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
    precision: Precision,
) -> Result<()> {
    if state.m.is_empty() && state.step == 0 {
        state.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!("{} moment tensors for {} parameters", state.m.len(), params.len()),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad.shape() != p.value.shape() || state.m[i].shape() != p.value.shape() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "parameter {i}: value {:?}, grad {:?}, moment {:?}",
                    p.value.shape(),
                    p.grad.shape(),
                    state.m[i].shape()
                ),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data();
        let w = p.value.data_mut();
        for k in 0..w.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            w[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        if precision == Precision::F32 {
            p.value.round_to_f32();
            state.m[i].round_to_f32();
            state.v[i].round_to_f32();
        }
    }
    Ok(())
}
