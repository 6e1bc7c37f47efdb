use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::nn::loss::gaussian_nll_rows;
use crate::nn::{gaussian_nll_unit_var, AdamW, AdamWConfig, Head, Mlp, MlpSpec, Module};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapConfig {
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub holdout: f64,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            hidden_layers: 2,
            epochs: 3,
            batch_size: 100,
            learning_rate: 1e-3,
            holdout: 0.2,
            seed: 0,
        }
    }
}

struct Split {
    x: Array2<f64>,
    y: Array2<f64>,
}

fn build(ds: &OfflineDataset, codes: &[Vec<Vec<f64>>], n_actions: usize, trajs: &[usize], with_code: bool) -> Split {
    let obs = ds.obs_dim();
    let width = codes.first().and_then(|c| c.first()).map_or(0, Vec::len);
    let rows: usize = trajs.iter().map(|&b| ds.trajectories[b].len()).sum();
    let mut x = Array2::zeros((rows, obs + n_actions + width));
    let mut y = Array2::zeros((rows, obs));
    let mut r = 0;
    for &b in trajs {
        let t = &ds.trajectories[b];
        for k in 0..t.len() {
            for (j, &v) in t.states[k].iter().enumerate() {
                x[[r, j]] = v;
            }
            x[[r, obs + t.actions[k]]] = 1.0;
            if with_code {
                for (j, &v) in codes[b][k].iter().enumerate() {
                    x[[r, obs + n_actions + j]] = v;
                }
            }
            for (j, &v) in t.states[k + 1].iter().enumerate() {
                y[[r, j]] = v;
            }
            r += 1;
        }
    }
    Split { x, y }
}

fn fit_and_score(train: &Split, test: &Split, cfg: &GapConfig) -> Result<f64> {
    let mut rng = Rng::new(cfg.seed);
    let spec = MlpSpec::new(train.x.ncols(), cfg.hidden_size, cfg.hidden_layers, train.y.ncols(), Head::GaussianMean);
    let mut net = Mlp::new(spec, &mut rng);
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.learning_rate, weight_decay: 0.0, ..Default::default() });
    let mut order: Vec<usize> = (0..train.x.nrows()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.x.select(Axis(0), chunk);
            let y = train.y.select(Axis(0), chunk);
            let (pred, cache) = net.forward(&x, true);
            let (loss, d) = gaussian_nll_unit_var(&pred, &y);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "independence_gap",
                    step: opt.step,
                    detail: format!("loss {loss}"),
                });
            }
            net.zero_grad();
            net.backward(&cache, &d);
            opt.step(net.params_mut());
        }
    }
    let nll = gaussian_nll_rows(&net.predict(&test.x), &test.y);
    Ok(nll.mean().unwrap_or(0.0))
}

/// Held-out transition NLL of an unconditional predictor minus that of a
/// code-conditioned one. Both see `(s_t, a_t)`; the unconditional one gets
/// zeros in place of the code, so the two share architecture, initial
/// weights and batch order. `codes[b][t]` is the feature vector for step t
/// of trajectory b.
pub fn independence_gap(
    ds: &OfflineDataset,
    codes: &[Vec<Vec<f64>>],
    n_actions: usize,
    cfg: &GapConfig,
) -> Result<f64> {
    if ds.len() < 2 {
        return Err(Error::Empty("need at least two trajectories"));
    }
    if codes.len() != ds.len() {
        return Err(Error::Shape(format!("{} code rows for {} trajectories", codes.len(), ds.len())));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::new(cfg.seed ^ 0x9e37).shuffle(&mut order);
    let n_test = ((ds.len() as f64 * cfg.holdout).round() as usize).clamp(1, ds.len() - 1);
    let (test_idx, train_idx) = order.split_at(n_test);
    let (cond, uncond) = rayon::join(
        || {
            fit_and_score(
                &build(ds, codes, n_actions, train_idx, true),
                &build(ds, codes, n_actions, test_idx, true),
                cfg,
            )
        },
        || {
            fit_and_score(
                &build(ds, codes, n_actions, train_idx, false),
                &build(ds, codes, n_actions, test_idx, false),
                cfg,
            )
        },
    );
    Ok(uncond? - cond?)
}
