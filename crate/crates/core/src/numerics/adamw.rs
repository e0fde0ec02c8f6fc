use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NumericsError;

/// AdamW hyperparameters with the conventional defaults; the learning rate
/// and weight decay come from the training configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWHyperparams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamWHyperparams {
    fn validate(&self) -> Result<(), NumericsError> {
        // zero learning rate is legal: frozen-step runs exercise the early
        // stopping contract
        for (name, value) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(NumericsError::BadHyperparam { name, value });
            }
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !value.is_finite() || !(0.0 < value && value < 1.0) {
                return Err(NumericsError::BadHyperparam { name, value });
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(NumericsError::BadHyperparam {
                name: "epsilon",
                value: self.epsilon,
            });
        }
        Ok(())
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamWState {
    hyper: AdamWHyperparams,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl AdamWState {
    /// Zero-initialized moments matching the given parameter shapes.
    pub fn new(params: &[&Tensor], hyper: AdamWHyperparams) -> Result<Self, NumericsError> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn hyperparams(&self) -> &AdamWHyperparams {
        &self.hyper
    }

    /// One decoupled-weight-decay update:
    ///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    ///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Vec<f64>],
    ) -> Result<(), NumericsError> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(NumericsError::ParamCountMismatch {
                expected: self.first_moment.len(),
                actual: params.len().max(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let bias1 = 1.0 - h.beta1.powi(t);
        let bias2 = 1.0 - h.beta2.powi(t);
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, theta) in param.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *theta -=
                    h.learning_rate * (m_hat / (v_hat.sqrt() + h.epsilon) + h.weight_decay * *theta);
            }
        }
        Ok(())
    }
}
