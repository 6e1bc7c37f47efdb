//! Target sweeps, alignment metrics and exact oracles.

use num_rational::Rational64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::gambling::EXACT_OUTCOMES;
use crate::envs::EnvFactory;
use crate::error::{Error, Result};
use crate::esper::theorem::{theorem_check, Statistic};
use crate::esper::Histogram;
use crate::policy::{rollout_batch, CondPolicy, ConditioningMode, EpisodeRngs};
use crate::rng::Rng;
use crate::trajectory::EnvId;

/// Exact return-conditioned behavior on the gambling game under the uniform
/// data policy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GamblingOracle {
    pub rows: Vec<OracleRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRow {
    pub z: Rational64,
    pub p_z: Rational64,
    /// `p(a | R = z)`.
    pub policy: Vec<Rational64>,
    /// Expected return of acting with `policy`.
    pub expected_return: Rational64,
}

impl GamblingOracle {
    pub fn row(&self, z: i64) -> Option<&OracleRow> {
        self.rows.iter().find(|r| r.z == Rational64::from_integer(z))
    }
}

/// Expected payout of each gambling action.
pub fn gambling_action_values() -> Vec<Rational64> {
    EXACT_OUTCOMES
        .iter()
        .map(|outs| outs.iter().map(|&(r, n, d)| Rational64::new(n, d) * Rational64::from_integer(r)).sum())
        .collect()
}

pub fn gambling_oracle() -> GamblingOracle {
    let values = gambling_action_values();
    let rows = theorem_check(Statistic::Return)
        .rows
        .into_iter()
        .map(|r| {
            let expected_return = r.policy.iter().zip(&values).map(|(p, v)| p * v).sum();
            OracleRow { z: r.z, p_z: r.p_z, policy: r.policy, expected_return }
        })
        .collect();
    GamblingOracle { rows }
}

/// Which targets to sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    Auto(String),
    List(Vec<f64>),
}

impl Default for Targets {
    fn default() -> Self {
        Targets::Auto("auto".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub targets: Targets,
    pub episodes_per_target: usize,
    pub seed: u64,
    pub greedy: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { targets: Targets::default(), episodes_per_target: 1000, seed: 0, greedy: false }
    }
}

impl SweepSpec {
    pub fn default_episodes(env: EnvId) -> usize {
        match env {
            EnvId::G2048 => 300,
            _ => 1000,
        }
    }
}

/// Nearest-rank quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let i = (q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[i]
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// 11 evenly spaced quantiles of the training conditions, deduplicated.
pub fn auto_targets(conditions: &[f64]) -> Vec<f64> {
    let s = sorted(conditions);
    let mut out: Vec<f64> = (0..=10).map(|k| quantile_sorted(&s, k as f64 / 10.0)).collect();
    out.dedup();
    out
}

/// `[1st, 99th]` percentile band of the training conditions.
pub fn support(conditions: &[f64]) -> (f64, f64) {
    let s = sorted(conditions);
    (quantile_sorted(&s, 0.01), quantile_sorted(&s, 0.99))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub target: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub in_distribution: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: EnvId,
    pub method: String,
    pub rows: Vec<TargetRow>,
    pub alignment_mae: Option<f64>,
    pub max_performance: f64,
    pub histogram: Histogram,
    pub independence_gap: Option<f64>,
    pub seeds: Vec<u64>,
    pub dataset_hash: String,
}

impl EvalReport {
    pub fn best_target(&self) -> Option<&TargetRow> {
        self.rows.iter().max_by(|a, b| a.mean.total_cmp(&b.mean))
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Episode returns for one target. Episode `e` of target index `k` uses
/// `Rng::new(seed).split(k).split(e)`, so methods and data fractions face
/// the same environment randomness.
pub fn evaluate_target(
    policy: &CondPolicy,
    factory: &EnvFactory,
    target: f64,
    target_index: usize,
    spec: &SweepSpec,
    mode: ConditioningMode,
) -> Result<Vec<f64>> {
    const LOCKSTEP: usize = 100;
    let root = Rng::new(spec.seed).split(target_index as u64);
    let mut returns = Vec::with_capacity(spec.episodes_per_target);
    let episodes: Vec<usize> = (0..spec.episodes_per_target).collect();
    for chunk in episodes.chunks(LOCKSTEP) {
        let envs = chunk.iter().map(|_| factory.make()).collect();
        let rngs = chunk.iter().map(|&e| EpisodeRngs::from_root(&root.split(e as u64))).collect();
        for t in rollout_batch(policy, envs, target, mode, rngs, spec.greedy)? {
            returns.push(t.rewards.iter().sum());
        }
    }
    Ok(returns)
}

/// Sweeps the targets and scores alignment over in-distribution targets.
pub fn evaluate_sweep(
    policy: &CondPolicy,
    factory: &EnvFactory,
    spec: &SweepSpec,
    mode: ConditioningMode,
    conditions: &[f64],
) -> Result<EvalReport> {
    if spec.episodes_per_target == 0 {
        return Err(Error::Config("episodes_per_target must be at least 1".into()));
    }
    if conditions.is_empty() {
        return Err(Error::Empty("no training conditions"));
    }
    let targets = match &spec.targets {
        Targets::List(t) if t.iter().all(|v| v.is_finite()) && !t.is_empty() => t.clone(),
        Targets::List(_) => return Err(Error::Config("targets must be a nonempty list of finite values".into())),
        Targets::Auto(s) if s == "auto" => auto_targets(conditions),
        Targets::Auto(s) => return Err(Error::Config(format!("unknown target spec `{s}`"))),
    };
    let (lo, hi) = support(conditions);
    let rows: Vec<TargetRow> = targets
        .par_iter()
        .enumerate()
        .map(|(k, &target)| {
            let r = evaluate_target(policy, factory, target, k, spec, mode)?;
            let (mean, std) = mean_std(&r);
            Ok(TargetRow { target, mean, std, n: r.len(), in_distribution: target >= lo && target <= hi })
        })
        .collect::<Result<_>>()?;
    let inside: Vec<f64> = rows.iter().filter(|r| r.in_distribution).map(|r| (r.mean - r.target).abs()).collect();
    let alignment_mae = (!inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64);
    let max_performance = rows.iter().map(|r| r.mean).fold(f64::NEG_INFINITY, f64::max);
    Ok(EvalReport {
        env: factory.id,
        method: mode.as_str().into(),
        rows,
        alignment_mae,
        max_performance,
        histogram: Histogram::new(conditions, 20),
        independence_gap: None,
        seeds: vec![spec.seed],
        dataset_hash: String::new(),
    })
}

/// Best mean return over the sweep's targets.
pub fn max_performance(
    policy: &CondPolicy,
    factory: &EnvFactory,
    spec: &SweepSpec,
    mode: ConditioningMode,
    conditions: &[f64],
) -> Result<f64> {
    Ok(evaluate_sweep(policy, factory, spec, mode, conditions)?.max_performance)
}
