//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::layers::{Grads, ParamStore};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0, beta1: BETA1, beta2: BETA2, epsilon: EPSILON }
    }
}

/// One Adam update of every unfrozen parameter. Parameters are kept on the
/// f32 grid. A non-finite gradient aborts before anything is modified.
pub fn adam_step(params: &mut ParamStore, grads: &Grads, state: &mut OptimizerState, lr: f64) -> Result<()> {
    for (id, g) in grads.iter() {
        if !params.is_frozen(id) && !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {}", params.param(id).name)));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (id, param) in params.iter_mut() {
        if param.frozen {
            continue;
        }
        let i = id.index();
        let g = grads.get(id).data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in param.value.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w = (*w - lr * m_hat / (v_hat.sqrt() + eps)) as f32 as f64;
        }
    }
    Ok(())
}
