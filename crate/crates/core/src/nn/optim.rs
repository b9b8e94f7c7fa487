use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::dense::{DenseNetwork, Gradients};
use crate::error::{LensError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_lr: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            base_lr: 1e-3,
        }
    }
}

/// Adam moment accumulators over a fixed list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_network(config: AdamConfig, net: &DenseNetwork) -> Self {
        let shapes: Vec<usize> = net.parameter_slices().map(|s| s.len()).collect();
        Self::new(config, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` at learning rate `lr`.
    pub fn step<'a, 'b>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut [f64]>,
        grads: impl IntoIterator<Item = &'b [f64]>,
        lr: f64,
    ) -> Result<()> {
        let params: Vec<&mut [f64]> = params.into_iter().collect();
        let grads: Vec<&[f64]> = grads.into_iter().collect();
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(LensError::DimensionMismatch {
                expected: self.first.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != self.first[i].len() {
                return Err(LensError::DimensionMismatch {
                    expected: self.first[i].len(),
                    actual: p.len(),
                });
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(LensError::NonFiniteGradient(format!(
                    "slice {i}, coordinate {j}, value {}",
                    g[j]
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn step_network(&mut self, net: &mut DenseNetwork, grads: &Gradients, lr: f64) -> Result<()> {
        self.step(net.parameter_slices_mut(), grads.slices(), lr)
    }
}

/// Cosine-annealed learning rate, no warmup or restarts.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    if total_epochs == 0 {
        return base_lr;
    }
    base_lr * 0.5 * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos())
}
