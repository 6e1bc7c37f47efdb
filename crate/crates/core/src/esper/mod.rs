//! Adversarial clustering of trajectories and cluster-conditioned return
//! labels.

pub mod config;
pub mod gap;
pub mod model;
pub mod theorem;

use std::collections::HashMap;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use config::EsperConfig;
pub use gap::{independence_gap, GapConfig};
pub use model::{sample_past_assignment, ClusterLosses, EsperModels};

use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::nn::{gaussian_nll_unit_var, Module};
use crate::returns::suffix_returns;
use crate::rng::Rng;
use crate::trajectory::{EnvId, Trajectory};

/// Group indices of one step's code (one entry per group).
pub type Code = Vec<usize>;

const ASSIGN_CHUNK: usize = 256;
const PREDICT_CHUNK: usize = 4096;

/// Mean losses over one clustering epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTelemetry {
    pub epoch: usize,
    pub l_theta: f64,
    pub l_phi: f64,
    pub action_ce: f64,
    pub batches: usize,
}

/// Runs the alternating θ/φ schedule for `cluster_epochs` epochs.
pub fn adversarial_train(models: &mut EsperModels, ds: &OfflineDataset, rng: &mut Rng) -> Result<Vec<EpochTelemetry>> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset has no trajectories"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut telemetry = Vec::new();
    for epoch in 0..models.config.cluster_epochs {
        rng.shuffle(&mut order);
        let (mut lt, mut lp, mut ce, mut n) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(models.config.batch_size) {
            let trajs: Vec<&Trajectory> = chunk.iter().map(|&i| &ds.trajectories[i]).collect();
            let l = models.train_batch(&trajs, rng)?;
            lt += l.l_theta;
            lp += l.l_phi;
            ce += l.action_ce;
            n += 1;
        }
        let t = EpochTelemetry {
            epoch,
            l_theta: lt / n as f64,
            l_phi: lp / n as f64,
            action_ce: ce / n as f64,
            batches: n,
        };
        tracing::info!(epoch, l_theta = t.l_theta, l_phi = t.l_phi, action_ce = t.action_ce, "clustering epoch");
        telemetry.push(t);
    }
    Ok(telemetry)
}

/// Per-step codes of one trajectory with its own noise stream.
pub fn assign_clusters(models: &EsperModels, traj: &Trajectory, rng: &mut Rng) -> Result<Vec<Code>> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory has no steps"));
    }
    let noise = models.noise(traj.len(), rng);
    Ok(models.codes_with_noise(&[traj], &noise).hard_indices())
}

/// Codes for every step of every trajectory. Trajectory `i` draws its noise
/// from `Rng::new(seed).split(i)`, so the result is independent of batching.
pub fn assign_all(models: &EsperModels, ds: &OfflineDataset, seed: u64) -> Vec<Vec<Code>> {
    let root = Rng::new(seed);
    let mut out = Vec::with_capacity(ds.len());
    for (c, chunk) in ds.trajectories.chunks(ASSIGN_CHUNK).enumerate() {
        let trajs: Vec<&Trajectory> = chunk.iter().collect();
        let rows: usize = chunk.iter().map(Trajectory::len).sum();
        let mut noise = Array2::zeros((rows, models.config.rep_size));
        let mut r = 0;
        for (k, t) in chunk.iter().enumerate() {
            let mut rng = root.split((c * ASSIGN_CHUNK + k) as u64);
            let n = models.noise(t.len(), &mut rng);
            noise.slice_mut(s![r..r + t.len(), ..]).assign(&n);
            r += t.len();
        }
        let codes = models.codes_with_noise(&trajs, &noise).hard_indices();
        let mut it = codes.into_iter();
        for t in chunk {
            out.push(it.by_ref().take(t.len()).collect());
        }
    }
    out
}

/// One-hot encoding of a grouped code.
pub fn code_features(code: &[usize], group_size: usize) -> Vec<f64> {
    let mut v = vec![0.0; code.len() * group_size];
    for (g, &k) in code.iter().enumerate() {
        v[g * group_size + k] = 1.0;
    }
    v
}

/// Labels `R̂_t` for every step, plus the frozen codes used to produce them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnLabeledDataset {
    pub env_id: EnvId,
    pub labels: Vec<Vec<f64>>,
    pub codes: Vec<Vec<Code>>,
}

/// Equal-width histogram of a set of values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            return Self { edges: vec![0.0, 0.0], counts: vec![0] };
        }
        let bins = bins.max(1);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }
}

impl ReturnLabeledDataset {
    pub fn flat_labels(&self) -> Vec<f64> {
        self.labels.iter().flatten().copied().collect()
    }

    pub fn histogram(&self, bins: usize) -> Histogram {
        Histogram::new(&self.flat_labels(), bins)
    }

    /// Writes `{state, action, r_hat}` records, one per line.
    pub fn write_records<W: std::io::Write>(&self, ds: &OfflineDataset, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Rec<'a> {
            state: &'a [f64],
            action: usize,
            r_hat: f64,
        }
        for (traj, labels) in ds.trajectories.iter().zip(&self.labels) {
            for (t, &r_hat) in labels.iter().enumerate() {
                serde_json::to_writer(&mut w, &Rec { state: &traj.states[t], action: traj.actions[t], r_hat })?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

fn return_features(
    models: &EsperModels,
    ds: &OfflineDataset,
    codes: &[Vec<Code>],
    idx: &[(usize, usize)],
) -> Array2<f64> {
    let gs = models.config.group_size();
    let (rep, obs, na) = (models.config.rep_size, models.obs_dim, models.n_actions);
    let mut x = Array2::zeros((idx.len(), rep + obs + na));
    for (r, &(b, t)) in idx.iter().enumerate() {
        let traj = &ds.trajectories[b];
        for (g, &k) in codes[b][t].iter().enumerate() {
            x[[r, g * gs + k]] = 1.0;
        }
        for (j, &v) in traj.states[t].iter().enumerate() {
            x[[r, rep + j]] = v;
        }
        x[[r, rep + obs + traj.actions[t]]] = 1.0;
    }
    x
}

/// Fits the return predictor on `(code_t, s_t, a_t) -> suffix return` and
/// relabels every step with its prediction. Codes are drawn once per
/// `(trajectory, t)` from `code_seed` and reused for fitting and labeling.
pub fn label_returns(
    models: &mut EsperModels,
    ds: &OfflineDataset,
    code_seed: u64,
    rng: &mut Rng,
) -> Result<ReturnLabeledDataset> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset has no trajectories"));
    }
    let codes = assign_all(models, ds, code_seed);
    let targets: Vec<Vec<f64>> = ds.trajectories.iter().map(|t| suffix_returns(t, ds.gamma)).collect();
    let flat: Vec<f64> = targets.iter().flatten().copied().collect();
    let mean = flat.iter().sum::<f64>() / flat.len() as f64;
    let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / flat.len() as f64;
    models.ret_mean = mean;
    models.ret_std = if var > 1e-12 { var.sqrt() } else { 1.0 };

    let mut idx: Vec<(usize, usize)> =
        ds.trajectories.iter().enumerate().flat_map(|(b, t)| (0..t.len()).map(move |k| (b, k))).collect();
    let batch = models.config.batch_size;
    let total_steps = (models.config.label_epochs * idx.len().div_ceil(batch)).max(1);
    let base_lr = models.config.label_learning_rate;
    let mut k = 0usize;
    for epoch in 0..models.config.label_epochs {
        rng.shuffle(&mut idx);
        let mut total = 0.0;
        let mut n = 0usize;
        for chunk in idx.chunks(batch) {
            let x = return_features(models, ds, &codes, chunk);
            let y = Array2::from_shape_fn((chunk.len(), 1), |(r, _)| {
                let (b, t) = chunk[r];
                (targets[b][t] - models.ret_mean) / models.ret_std
            });
            let (pred, cache) = models.ret.forward(&x, true);
            let (loss, d) = gaussian_nll_unit_var(&pred, &y);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "label",
                    step: models.psi_opt.step,
                    detail: format!("return loss {loss}"),
                });
            }
            models.ret.zero_grad();
            models.ret.backward(&cache, &d);
            // Linear decay to zero keeps the final iterate close to the conditional means.
            models.psi_opt.config.lr = base_lr * (1.0 - k as f64 / total_steps as f64);
            k += 1;
            models.psi_opt.step(models.ret.params_mut());
            total += loss;
            n += 1;
        }
        tracing::info!(epoch, loss = total / n as f64, "return predictor epoch");
    }

    // A conditional mean of returns cannot leave the range of observed returns.
    let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut labels: Vec<Vec<f64>> = ds.trajectories.iter().map(|t| vec![0.0; t.len()]).collect();
    let all: Vec<(usize, usize)> =
        ds.trajectories.iter().enumerate().flat_map(|(b, t)| (0..t.len()).map(move |k| (b, k))).collect();
    for chunk in all.chunks(PREDICT_CHUNK) {
        let pred = models.ret.predict(&return_features(models, ds, &codes, chunk));
        for (r, &(b, t)) in chunk.iter().enumerate() {
            labels[b][t] = (pred[[r, 0]] * models.ret_std + models.ret_mean).clamp(lo, hi);
        }
    }
    Ok(ReturnLabeledDataset { env_id: ds.env_id, labels, codes })
}

/// Fraction of items whose label equals the majority label of their code.
pub fn cluster_purity(codes: &[Code], labels: &[usize]) -> f64 {
    let mut counts: HashMap<&Code, HashMap<usize, usize>> = HashMap::new();
    for (c, &l) in codes.iter().zip(labels) {
        *counts.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / codes.len().max(1) as f64
}

/// Mean label and mean raw suffix return per code, for consistency checks.
pub fn per_code_means(ds: &OfflineDataset, labeled: &ReturnLabeledDataset) -> Vec<(Code, usize, f64, f64)> {
    let mut acc: HashMap<Code, (usize, f64, f64)> = HashMap::new();
    for (b, traj) in ds.trajectories.iter().enumerate() {
        let raw = suffix_returns(traj, ds.gamma);
        for (t, &r) in raw.iter().enumerate() {
            let e = acc.entry(labeled.codes[b][t].clone()).or_default();
            e.0 += 1;
            e.1 += labeled.labels[b][t];
            e.2 += r;
        }
    }
    let mut out: Vec<_> = acc.into_iter().map(|(c, (n, l, r))| (c, n, l / n as f64, r / n as f64)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}
