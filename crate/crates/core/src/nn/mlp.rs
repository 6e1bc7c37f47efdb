use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::batchnorm::{BatchNorm, BnCache};
use super::linear::Linear;
use super::tensor::{Module, Tensor};
use crate::error::Result;
use crate::rng::Rng;

/// How the final linear layer is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Logits,
    GaussianMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub batch_norm: bool,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(input: usize, hidden_size: usize, hidden_layers: usize, output: usize, head: Head) -> Self {
        Self { input, hidden: vec![hidden_size; hidden_layers], output, batch_norm: true, head }
    }
}

/// Hidden blocks are `Linear -> BatchNorm -> ReLU`; the head is a bare `Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
    pub norms: Vec<BatchNorm>,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    norms: Vec<Option<BnCache>>,
    activated: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Self {
        let mut dims = vec![spec.input];
        dims.extend(&spec.hidden);
        dims.push(spec.output);
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        let norms = if spec.batch_norm { spec.hidden.iter().map(|&h| BatchNorm::new(h)).collect() } else { Vec::new() };
        Self { spec, layers, norms }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> (Array2<f64>, MlpCache) {
        let n_hidden = self.spec.hidden.len();
        let mut cache = MlpCache { inputs: Vec::new(), norms: Vec::new(), activated: Vec::new() };
        let mut h = x.clone();
        for i in 0..n_hidden {
            let z = self.layers[i].forward(&h);
            cache.inputs.push(h);
            let (z, bn) = match (self.norms.get_mut(i), train) {
                (Some(bn), true) => {
                    let (y, c) = bn.forward_train(&z);
                    (y, Some(c))
                }
                (Some(bn), false) => (bn.forward_eval(&z), None),
                (None, _) => (z, None),
            };
            cache.norms.push(bn);
            let a = z.mapv(|v| v.max(0.0));
            cache.activated.push(a.clone());
            h = a;
        }
        let out = self.layers[n_hidden].forward(&h);
        cache.inputs.push(h);
        (out, cache)
    }

    /// Inference without caching or running-stat updates.
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        let n_hidden = self.spec.hidden.len();
        let mut h = x.clone();
        for i in 0..n_hidden {
            let mut z = self.layers[i].forward(&h);
            if let Some(bn) = self.norms.get(i) {
                z = bn.forward_eval(&z);
            }
            h = z.mapv(|v| v.max(0.0));
        }
        self.layers[n_hidden].forward(&h)
    }

    /// Backward through a train-mode forward.
    pub fn backward(&mut self, cache: &MlpCache, dout: &Array2<f64>) -> Array2<f64> {
        let n_hidden = self.spec.hidden.len();
        let mut d = self.layers[n_hidden].backward(&cache.inputs[n_hidden], dout);
        for i in (0..n_hidden).rev() {
            d.zip_mut_with(&cache.activated[i], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            if let Some(bn_cache) = &cache.norms[i] {
                d = self.norms[i].backward(bn_cache, &d);
            } else if let Some(bn) = self.norms.get(i) {
                let inv_std = bn.running_var.mapv(|v| 1.0 / (v + super::batchnorm::BN_EPS).sqrt());
                d = &d * &(&inv_std * &bn.gamma.value.row(0));
            }
            d = self.layers[i].backward(&cache.inputs[i], &d);
        }
        d
    }
}

impl Module for Mlp {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        for n in &mut self.norms {
            out.extend(n.params_mut());
        }
        out
    }

    fn state(&self, prefix: &str, out: &mut Vec<(String, Array2<f64>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.state(&format!("{prefix}.linear{i}"), out);
        }
        for (i, n) in self.norms.iter().enumerate() {
            n.state(&format!("{prefix}.norm{i}"), out);
        }
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, Array2<f64>>) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.load_state(&format!("{prefix}.linear{i}"), src)?;
        }
        for (i, n) in self.norms.iter_mut().enumerate() {
            n.load_state(&format!("{prefix}.norm{i}"), src)?;
        }
        Ok(())
    }
}
