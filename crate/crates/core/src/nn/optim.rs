//! Adam with bias correction and the Noam warm-up schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tensor::{Scalar, Tensor};

/// Adam hyperparameters. The (beta2, eps) defaults follow the convention of
/// the transformer training recipe the Noam schedule comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First/second moment estimates per parameter, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    pub fn matches(&self, params: &ParamStore<S>) -> bool {
        self.m.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter())
                .all(|(p, m)| p.value.shape() == m.shape())
    }
}

/// One Adam update from the gradients currently stored in `params`.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    state: &mut AdamState<S>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !state.matches(params) {
        return Err(Error::shape("adam_step: state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (idx, p) in params.iter_mut().enumerate() {
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        for ((pv, &g), (mi, vi)) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            let g = g.as_f64();
            let mnew = cfg.beta1 * mi.as_f64() + (1.0 - cfg.beta1) * g;
            let vnew = cfg.beta2 * vi.as_f64() + (1.0 - cfg.beta2) * g * g;
            *mi = S::from_f64(mnew);
            *vi = S::from_f64(vnew);
            let m_hat = mnew / bc1;
            let v_hat = vnew / bc2;
            let update = lr * m_hat / (v_hat.sqrt() + cfg.eps);
            *pv = S::from_f64(pv.as_f64() - update);
        }
    }
    Ok(())
}

/// Noam learning-rate schedule calibrated so the peak (at `step == warmup`)
/// equals `base_lr`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoamSchedule {
    pub base_lr: f64,
    pub warmup: u64,
    pub d_model: usize,
}

impl NoamSchedule {
    pub fn new(base_lr: f64, warmup: u64, d_model: usize) -> Self {
        NoamSchedule {
            base_lr,
            warmup,
            d_model,
        }
    }

    /// `lr(step) = scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`
    /// with `scale = base_lr * sqrt(d_model * warmup)`.
    pub fn lr(&self, step: u64) -> Result<f64> {
        if step == 0 {
            return Err(Error::argument("noam_lr: step must be >= 1"));
        }
        let s = step as f64;
        let w = self.warmup as f64;
        let scale = self.base_lr * (self.d_model as f64 * w).sqrt();
        Ok(scale * (self.d_model as f64).powf(-0.5) * (s.powf(-0.5)).min(s * w.powf(-1.5)))
    }
}
