use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, LayerGrad, Network};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    /// Inverse-time decay: the step size is `lr / (1 + decay * steps_taken)`.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<LayerGrad>,
    second_moment: Vec<LayerGrad>,
}

impl AdamState {
    pub fn new(network: &Network, config: AdamConfig) -> Self {
        let zeros = || {
            network
                .layers()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.config.lr / (1.0 + self.config.decay * self.step_count as f64)
    }

    /// One bias-corrected Adam update. Shapes and finiteness are checked
    /// before anything is mutated.
    pub fn step(&mut self, network: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.first_moment.len()
            || network.layers().count() != self.first_moment.len()
        {
            return Err(Error::Shape(format!(
                "optimizer tracks {} layers, gradients have {}",
                self.first_moment.len(),
                grads.layers.len()
            )));
        }
        for ((g, m), layer) in grads
            .layers
            .iter()
            .zip(&self.first_moment)
            .zip(network.layers())
        {
            if g.weights.dim() != m.weights.dim()
                || g.biases.dim() != m.biases.dim()
                || layer.weights.dim() != m.weights.dim()
            {
                return Err(Error::Shape(
                    "gradient shape differs from parameter shape".into(),
                ));
            }
        }
        if !grads.is_finite() {
            return Err(Error::Divergence {
                epoch: None,
                detail: format!(
                    "non-finite gradient at optimizer step {}",
                    self.step_count + 1
                ),
            });
        }

        let lr = self.effective_lr();
        self.step_count += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in network
            .layers_mut()
            .zip(&grads.layers)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut layer.biases)
                .and(&g.biases)
                .and(&mut m.biases)
                .and(&mut v.biases)
                .for_each(update);
        }
        Ok(())
    }
}
