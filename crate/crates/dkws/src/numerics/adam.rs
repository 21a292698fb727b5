//! Adam with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;
use super::{NumericsError, ParamSet};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip applied before the update.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, clip_norm: 5.0 }
    }
}

/// Per-parameter first/second moments plus the step counter.
pub struct OptimizerState<S> {
    pub config: AdamConfig,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ParamSet<S>, config: AdamConfig) -> Self {
        let first = params.iter().map(|(_, e)| Tensor::zeros(e.value.shape().to_vec())).collect();
        let second = params.iter().map(|(_, e)| Tensor::zeros(e.value.shape().to_vec())).collect();
        OptimizerState { config, first, second, step: 0 }
    }

    /// One optimizer step over the accumulated gradients: clip by global norm,
    /// apply bias-corrected Adam, then zero the gradient slots.
    pub fn step(&mut self, params: &mut ParamSet<S>) -> Result<(), NumericsError> {
        let cfg = self.config;

        let mut sq_sum = 0.0f64;
        for (id, e) in params.iter() {
            for g in e.grad.data() {
                let gv = g.to_f64();
                if !gv.is_finite() {
                    return Err(NumericsError::NonFiniteGradient {
                        param: params.name(id).to_string(),
                    });
                }
                sq_sum += gv * gv;
            }
        }
        let norm = sq_sum.sqrt();
        let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };

        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let one_minus_b1 = S::from_f64(1.0 - cfg.beta1);
        let one_minus_b2 = S::from_f64(1.0 - cfg.beta2);
        let gscale = S::from_f64(scale);
        let lr = S::from_f64(cfg.learning_rate);
        let inv_bc1 = S::from_f64(1.0 / bc1);
        let inv_bc2 = S::from_f64(1.0 / bc2);
        let eps = S::from_f64(cfg.epsilon);

        let n = params.len();
        for i in 0..n {
            let id = super::ParamId(i);
            let grad = params.grad(id).data().to_vec();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let value = params.value_mut(id).data_mut();
            for j in 0..grad.len() {
                let g = grad[j] * gscale;
                m[j] = b1 * m[j] + one_minus_b1 * g;
                v[j] = b2 * v[j] + one_minus_b2 * g * g;
                let m_hat = m[j] * inv_bc1;
                let v_hat = v[j] * inv_bc2;
                value[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}
