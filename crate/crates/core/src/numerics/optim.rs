//! SGD with momentum and Adam over flat parameter vectors.
//!
//! Training code concatenates whatever it is optimizing (network weights,
//! and during revision the transition slack as well) into one flat vector;
//! the optimizer neither knows nor cares about the structure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Momentum coefficient (SGD mode only).
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coupling applied to the gradient, SGD mode only.
    pub weight_decay: f64,
}

impl OptimizerHyper {
    pub fn sgd_momentum(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerHyper {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            weight_decay,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerHyper {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter accumulators plus the step counter for bias correction.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    hyper: OptimizerHyper,
    steps: u64,
    /// Momentum buffer (SGD) or first moment (Adam).
    m: Vec<f64>,
    /// Second moment (Adam only, empty for SGD).
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(hyper: OptimizerHyper, param_count: usize) -> Result<Self> {
        if !(hyper.learning_rate > 0.0) {
            return Err(Error::domain(format!(
                "learning rate must be positive, got {}",
                hyper.learning_rate
            )));
        }
        let v = match hyper.kind {
            OptimizerKind::Adam => vec![0.0; param_count],
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        Ok(OptimizerState {
            hyper,
            steps: 0,
            m: vec![0.0; param_count],
            v,
        })
    }

    pub fn hyper(&self) -> &OptimizerHyper {
        &self.hyper
    }

    pub fn param_count(&self) -> usize {
        self.m.len()
    }

    /// Step-decay schedules mutate the rate between epochs.
    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0) {
            return Err(Error::domain("learning rate must stay positive"));
        }
        self.hyper.learning_rate = learning_rate;
        Ok(())
    }

    /// One update in place. SGD-momentum: `v <- mu v - eta (g + lambda p)`,
    /// `p <- p + v`. Adam: bias-corrected moments, no weight decay.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer sized for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.steps += 1;
        let h = self.hyper;
        match h.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, &g), buf) in params.iter_mut().zip(grads).zip(&mut self.m) {
                    let g_eff = g + h.weight_decay * *p;
                    *buf = h.momentum * *buf - h.learning_rate * g_eff;
                    *p += *buf;
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - h.beta1.powi(self.steps as i32);
                let bc2 = 1.0 - h.beta2.powi(self.steps as i32);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                    *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
                }
            }
        }
        Ok(())
    }
}
