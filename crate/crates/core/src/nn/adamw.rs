use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    /// One update over `params`, which must be passed in the same order
    /// on every call.
    pub fn step(&mut self, params: Vec<&mut Tensor>) {
        if self.moments.is_empty() {
            self.moments =
                params.iter().map(|p| (Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim()))).collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (p, (m, v)) in params.into_iter().zip(self.moments.iter_mut()) {
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                *w -= c.lr * c.weight_decay * *w;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            });
        }
    }
}
