//! Adam with bias correction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamStore;
use crate::tape::ParamId;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("adam: gradient for parameter {id} has shape {grad:?}, parameter has {param:?}")]
    ShapeMismatch {
        id: ParamId,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("adam: unknown parameter id {0}")]
    UnknownParam(ParamId),
    #[error("adam: update produced a non-finite value in parameter {0}")]
    NonFinite(ParamId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without an entry in `grads` are left alone.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<(), OptimError> {
        for (id, g) in grads {
            let p = params.get(*id);
            if *id >= self.first.len() {
                return Err(OptimError::UnknownParam(*id));
            }
            if p.shape() != g.shape() {
                return Err(OptimError::ShapeMismatch {
                    id: *id,
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (id, g) in grads {
            let m = self.first[*id].data_mut();
            let v = self.second[*id].data_mut();
            let p = params.get_mut(*id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(OptimError::NonFinite(*id));
            }
        }
        Ok(())
    }
}
