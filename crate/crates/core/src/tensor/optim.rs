use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_grad_norm: Some(10.0),
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            max_grad_norm: None,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("parameter `{0}` has a non-finite gradient")]
    NonFiniteGradient(String),
}

/// First-order optimizer over a fixed subset of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    params: Vec<ParamId>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|&p| vec![0.0; store.get(p).len()]).collect();
        Self {
            config,
            params,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update using the gradients currently stored on the params.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), OptimError> {
        let mut grads = Vec::with_capacity(self.params.len());
        for &p in &self.params {
            let t = store.get(p);
            let g = t
                .grad()
                .ok_or_else(|| OptimError::MissingGradient(store.name(p).to_string()))?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient(store.name(p).to_string()));
            }
            grads.push(g.to_vec());
        }
        if let Some(max_norm) = self.config.max_grad_norm {
            let norm = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let k = max_norm / norm;
                grads.iter_mut().flatten().for_each(|v| *v *= k);
            }
        }
        self.step_count += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (&p, g) in self.params.iter().zip(&grads) {
                    for (w, gv) in store.get_mut(p).data_mut().iter_mut().zip(g) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (
                    self.config.adam_beta1,
                    self.config.adam_beta2,
                    self.config.adam_epsilon,
                );
                let t = self.step_count as i32;
                let bc1 = 1.0 - b1.powi(t);
                let bc2 = 1.0 - b2.powi(t);
                for (i, (&p, g)) in self.params.iter().zip(&grads).enumerate() {
                    let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
                    let w = store.get_mut(p).data_mut();
                    for j in 0..g.len() {
                        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
