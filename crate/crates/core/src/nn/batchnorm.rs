use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};

use super::tensor::{load_into, Module, Tensor};
use crate::error::Result;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-feature batch normalization with a learned affine.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::new(Array2::ones((1, features))),
            beta: Tensor::zeros(1, features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: BN_MOMENTUM,
        }
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates (unbiased variance, as is conventional).
    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, BnCache) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &self.gamma.value.row(0) + self.beta.value.row(0);
        let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
        self.running_mean = &self.running_mean * (1.0 - self.momentum) + &(&mean * self.momentum);
        self.running_var = &self.running_var * (1.0 - self.momentum) + &(&unbiased * self.momentum);
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (x - &self.running_mean) * &inv_std;
        &xhat * &self.gamma.value.row(0) + self.beta.value.row(0)
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Array2<f64>) -> Array2<f64> {
        let n = dy.nrows() as f64;
        self.gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma.value.row(0);
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let scaled = &dxhat * n - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
        scaled * &(&cache.inv_std / n)
    }
}

impl Module for BatchNorm {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn state(&self, prefix: &str, out: &mut Vec<(String, Array2<f64>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.value.clone()));
        out.push((format!("{prefix}.beta"), self.beta.value.clone()));
        out.push((format!("{prefix}.running_mean"), self.running_mean.clone().insert_axis(Axis(0))));
        out.push((format!("{prefix}.running_var"), self.running_var.clone().insert_axis(Axis(0))));
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, Array2<f64>>) -> Result<()> {
        load_into(&mut self.gamma.value, &format!("{prefix}.gamma"), src)?;
        load_into(&mut self.beta.value, &format!("{prefix}.beta"), src)?;
        let mut m = self.running_mean.clone().insert_axis(Axis(0));
        load_into(&mut m, &format!("{prefix}.running_mean"), src)?;
        self.running_mean = m.row(0).to_owned();
        let mut v = self.running_var.clone().insert_axis(Axis(0));
        load_into(&mut v, &format!("{prefix}.running_var"), src)?;
        self.running_var = v.row(0).to_owned();
        Ok(())
    }
}
