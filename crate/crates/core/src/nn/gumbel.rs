use ndarray::{s, Array2};

use crate::rng::Rng;

/// Result of a grouped Gumbel-softmax draw. `output` is what downstream
/// layers consume; `soft` is kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GumbelSample {
    pub output: Array2<f64>,
    pub soft: Array2<f64>,
    pub groups: usize,
    pub temperature: f64,
}

impl GumbelSample {
    /// Index of the active entry in each group, per row.
    pub fn hard_indices(&self) -> Vec<Vec<usize>> {
        let width = self.soft.ncols() / self.groups;
        self.soft
            .rows()
            .into_iter()
            .map(|row| {
                (0..self.groups).map(|g| argmax(row.slice(s![g * width..(g + 1) * width]).iter().copied())).collect()
            })
            .collect()
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Draws with fresh Gumbel noise.
pub fn gumbel_softmax(
    logits: &Array2<f64>,
    groups: usize,
    temperature: f64,
    hard: bool,
    rng: &mut Rng,
) -> GumbelSample {
    let noise = Array2::from_shape_fn(logits.raw_dim(), |_| rng.gumbel());
    gumbel_softmax_with_noise(logits, &noise, groups, temperature, hard)
}

/// Same as [`gumbel_softmax`] with caller-supplied noise. With `hard` the
/// forward output is one-hot per group while gradients follow the soft
/// sample (straight-through).
pub fn gumbel_softmax_with_noise(
    logits: &Array2<f64>,
    noise: &Array2<f64>,
    groups: usize,
    temperature: f64,
    hard: bool,
) -> GumbelSample {
    assert!(groups > 0 && logits.ncols().is_multiple_of(groups), "logit width must split evenly into groups");
    let width = logits.ncols() / groups;
    let mut soft = (logits + noise) / temperature;
    for mut row in soft.rows_mut() {
        for g in 0..groups {
            let mut seg = row.slice_mut(s![g * width..(g + 1) * width]);
            let m = seg.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            seg.mapv_inplace(|v| (v - m).exp());
            let z = seg.sum();
            seg.mapv_inplace(|v| v / z);
        }
    }
    let output = if hard {
        let mut out = Array2::zeros(soft.raw_dim());
        for (r, row) in soft.rows().into_iter().enumerate() {
            for g in 0..groups {
                let k = argmax(row.slice(s![g * width..(g + 1) * width]).iter().copied());
                out[[r, g * width + k]] = 1.0;
            }
        }
        out
    } else {
        soft.clone()
    };
    GumbelSample { output, soft, groups, temperature }
}

/// Gradient w.r.t. the logits given the gradient w.r.t. `output`.
pub fn gumbel_backward(sample: &GumbelSample, dout: &Array2<f64>) -> Array2<f64> {
    let width = sample.soft.ncols() / sample.groups;
    let mut d = Array2::zeros(dout.raw_dim());
    for r in 0..dout.nrows() {
        for g in 0..sample.groups {
            let range = g * width..(g + 1) * width;
            let y = sample.soft.slice(s![r, range.clone()]);
            let dy = dout.slice(s![r, range.clone()]);
            let dot: f64 = y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
            for (k, idx) in range.enumerate() {
                d[[r, idx]] = y[k] * (dy[k] - dot) / sample.temperature;
            }
        }
    }
    d
}
