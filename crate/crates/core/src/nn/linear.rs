use std::collections::HashMap;

use ndarray::{Array2, Axis};

use super::tensor::{load_into, Module, Tensor};
use crate::error::Result;
use crate::rng::Rng;

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self { weight: Tensor::uniform(input, output, bound, rng), bias: Tensor::uniform(1, output, bound, rng) }
    }

    pub fn identity(n: usize) -> Self {
        Self { weight: Tensor::new(Array2::eye(n)), bias: Tensor::zeros(1, n) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value) + &self.bias.value
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.weight.grad += &x.t().dot(dy);
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.value.t())
    }
}

impl Module for Linear {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn state(&self, prefix: &str, out: &mut Vec<(String, Array2<f64>)>) {
        out.push((format!("{prefix}.weight"), self.weight.value.clone()));
        out.push((format!("{prefix}.bias"), self.bias.value.clone()));
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, Array2<f64>>) -> Result<()> {
        load_into(&mut self.weight.value, &format!("{prefix}.weight"), src)?;
        load_into(&mut self.bias.value, &format!("{prefix}.bias"), src)
    }
}
