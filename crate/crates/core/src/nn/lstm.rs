use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::tensor::{Module, Tensor};
use crate::error::Result;
use crate::rng::Rng;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Single-layer LSTM; gate blocks are ordered input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    xs: Vec<Array2<f64>>,
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Tensor::uniform(input, 4 * hidden, bound, rng),
            w_hh: Tensor::uniform(hidden, 4 * hidden, bound, rng),
            bias: Tensor::uniform(1, 4 * hidden, bound, rng),
            hidden,
        }
    }

    /// Runs over `xs[0..T]` (each `batch x input`) from a zero state.
    pub fn forward(&self, xs: &[Array2<f64>]) -> (Vec<Array2<f64>>, LstmCache) {
        let h = self.hidden;
        let batch = xs.first().map_or(0, |x| x.nrows());
        let mut cache = LstmCache {
            xs: xs.to_vec(),
            hs: vec![Array2::zeros((batch, h))],
            cs: vec![Array2::zeros((batch, h))],
            gates: Vec::with_capacity(xs.len()),
            tanh_c: Vec::with_capacity(xs.len()),
        };
        let mut outputs = Vec::with_capacity(xs.len());
        for x in xs {
            let prev_h = cache.hs.last().unwrap();
            let prev_c = cache.cs.last().unwrap();
            let mut z = x.dot(&self.w_ih.value) + prev_h.dot(&self.w_hh.value) + &self.bias.value;
            z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
            z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
            z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
            let i = z.slice(s![.., 0..h]);
            let f = z.slice(s![.., h..2 * h]);
            let g = z.slice(s![.., 2 * h..3 * h]);
            let o = z.slice(s![.., 3 * h..]);
            let c = &f * prev_c + &i * &g;
            let tc = c.mapv(f64::tanh);
            let hn = &o * &tc;
            outputs.push(hn.clone());
            cache.hs.push(hn);
            cache.cs.push(c);
            cache.tanh_c.push(tc);
            cache.gates.push(z);
        }
        (outputs, cache)
    }

    /// Backward from per-step output gradients. With `window = Some(k)`
    /// the recurrent gradient is cut at every multiple of `k` (truncated BPTT).
    pub fn backward(&mut self, cache: &LstmCache, dhs: &[Array2<f64>], window: Option<usize>) -> Vec<Array2<f64>> {
        let h = self.hidden;
        let steps = cache.xs.len();
        let batch = cache.hs[0].nrows();
        let mut dxs = vec![Array2::zeros((0, 0)); steps];
        let mut dh_next = Array2::<f64>::zeros((batch, h));
        let mut dc_next = Array2::<f64>::zeros((batch, h));
        for t in (0..steps).rev() {
            let z = &cache.gates[t];
            let i = z.slice(s![.., 0..h]);
            let f = z.slice(s![.., h..2 * h]);
            let g = z.slice(s![.., 2 * h..3 * h]);
            let o = z.slice(s![.., 3 * h..]);
            let tc = &cache.tanh_c[t];
            let dh = &dhs[t] + &dh_next;
            let mut dz = Array2::<f64>::zeros((batch, 4 * h));
            let dc = &dc_next + &(&dh * &o * &tc.mapv(|v| 1.0 - v * v));
            ndarray::Zip::from(dz.slice_mut(s![.., 3 * h..]))
                .and(&dh)
                .and(tc)
                .and(&o)
                .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));
            ndarray::Zip::from(dz.slice_mut(s![.., 0..h]))
                .and(&dc)
                .and(&g)
                .and(&i)
                .for_each(|d, &dc, &g, &i| *d = dc * g * i * (1.0 - i));
            ndarray::Zip::from(dz.slice_mut(s![.., h..2 * h]))
                .and(&dc)
                .and(&cache.cs[t])
                .and(&f)
                .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
            ndarray::Zip::from(dz.slice_mut(s![.., 2 * h..3 * h]))
                .and(&dc)
                .and(&i)
                .and(&g)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            self.w_ih.grad += &cache.xs[t].t().dot(&dz);
            self.w_hh.grad += &cache.hs[t].t().dot(&dz);
            self.bias.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            dxs[t] = dz.dot(&self.w_ih.value.t());
            if window.is_some_and(|k| t % k == 0) {
                dh_next.fill(0.0);
                dc_next.fill(0.0);
            } else {
                dh_next = dz.dot(&self.w_hh.value.t());
                dc_next = &dc * &f;
            }
        }
        dxs
    }
}

impl Module for Lstm {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }

    fn state(&self, prefix: &str, out: &mut Vec<(String, Array2<f64>)>) {
        out.push((format!("{prefix}.w_ih"), self.w_ih.value.clone()));
        out.push((format!("{prefix}.w_hh"), self.w_hh.value.clone()));
        out.push((format!("{prefix}.bias"), self.bias.value.clone()));
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, Array2<f64>>) -> Result<()> {
        super::tensor::load_into(&mut self.w_ih.value, &format!("{prefix}.w_ih"), src)?;
        super::tensor::load_into(&mut self.w_hh.value, &format!("{prefix}.w_hh"), src)?;
        super::tensor::load_into(&mut self.bias.value, &format!("{prefix}.bias"), src)
    }
}
