//! Condition-aware behavior cloning: a policy over `(state, condition)`
//! where the condition is either an ESPER label or the return-to-go.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::envs::AnyEnv;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, AdamW, AdamWConfig, Head, Mlp, MlpSpec, Module};
use crate::returns::suffix_returns;
use crate::rng::Rng;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Fixed target for the whole episode.
    EsperLabel,
    /// Target decremented by each observed reward.
    ReturnToGo,
}

impl ConditioningMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditioningMode::EsperLabel => "esper",
            ConditioningMode::ReturnToGo => "rtg",
        }
    }
}

impl std::str::FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "esper" | "esper_label" => Ok(ConditioningMode::EsperLabel),
            "rtg" | "return_to_go" => Ok(ConditioningMode::ReturnToGo),
            other => Err(Error::Config(format!("unknown conditioning mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_size: 512,
            hidden_layers: 3,
            steps: 50_000,
            batch_size: 100,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
        }
    }
}

/// Return-to-go conditions for every step (the baseline's training signal).
pub fn return_to_go_conditions(ds: &OfflineDataset) -> Vec<Vec<f64>> {
    ds.trajectories.iter().map(|t| suffix_returns(t, ds.gamma)).collect()
}

#[derive(Clone, Debug)]
pub struct CondPolicy {
    pub net: Mlp,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub cond_mean: f64,
    pub cond_std: f64,
}

fn inputs(states: &[&[f64]], conds: &[f64], mean: f64, std: f64) -> Array2<f64> {
    let obs = states.first().map_or(0, |s| s.len());
    let mut x = Array2::zeros((states.len(), obs + 1));
    for (r, (s, &c)) in states.iter().zip(conds).enumerate() {
        for (j, &v) in s.iter().enumerate() {
            x[[r, j]] = v;
        }
        x[[r, obs]] = (c - mean) / std;
    }
    x
}

/// Minimizes action cross-entropy given `(state, standardized condition)`
/// for `config.steps` minibatch steps over shuffled passes of the data.
pub fn train_policy(
    ds: &OfflineDataset,
    conditions: &[Vec<f64>],
    n_actions: usize,
    config: &PolicyConfig,
    rng: &mut Rng,
) -> Result<CondPolicy> {
    if conditions.len() != ds.len() || conditions.iter().zip(&ds.trajectories).any(|(c, t)| c.len() != t.len()) {
        return Err(Error::Shape("conditions do not line up with the dataset".into()));
    }
    let states: Vec<&[f64]> =
        ds.trajectories.iter().flat_map(|t| t.states[..t.len()].iter().map(Vec::as_slice)).collect();
    let actions: Vec<usize> = ds.trajectories.iter().flat_map(|t| t.actions.iter().copied()).collect();
    let conds: Vec<f64> = conditions.iter().flatten().copied().collect();
    train_policy_flat(&states, &actions, &conds, n_actions, config, rng)
}

/// Trains on flat `(state, action, condition)` samples in dataset order.
pub fn train_policy_flat(
    states: &[&[f64]],
    actions: &[usize],
    conds: &[f64],
    n_actions: usize,
    config: &PolicyConfig,
    rng: &mut Rng,
) -> Result<CondPolicy> {
    if states.is_empty() {
        return Err(Error::Empty("no training steps"));
    }
    if actions.len() != states.len() || conds.len() != states.len() {
        return Err(Error::Shape("states, actions and conditions differ in length".into()));
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
        return Err(Error::InvalidAction { action: a, reason: "outside the action space" });
    }
    let mean = conds.iter().sum::<f64>() / conds.len() as f64;
    let var = conds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / conds.len() as f64;
    let std = if var > 1e-12 { var.sqrt() } else { 1.0 };

    let obs_dim = states[0].len();
    let CondPolicy { mut net, .. } = CondPolicy::new(obs_dim, n_actions, config, rng);
    let mut opt =
        AdamW::new(AdamWConfig { lr: config.learning_rate, weight_decay: config.weight_decay, ..Default::default() });
    let mut idx: Vec<usize> = (0..states.len()).collect();
    let mut cursor = idx.len();
    let mut running = 0.0;
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(idx.len()) {
            if cursor == idx.len() {
                rng.shuffle(&mut idx);
                cursor = 0;
            }
            batch.push(idx[cursor]);
            cursor += 1;
        }
        let bs: Vec<&[f64]> = batch.iter().map(|&i| states[i]).collect();
        let bc: Vec<f64> = batch.iter().map(|&i| conds[i]).collect();
        let ba: Vec<usize> = batch.iter().map(|&i| actions[i]).collect();
        let (logits, cache) = net.forward(&inputs(&bs, &bc, mean, std), true);
        let (loss, d) = softmax_cross_entropy(&logits, &ba);
        if !loss.is_finite() {
            return Err(Error::Diverged { stage: "train", step: step as u64, detail: format!("policy loss {loss}") });
        }
        net.zero_grad();
        net.backward(&cache, &d);
        opt.config.lr = config.learning_rate * (1.0 - step as f64 / config.steps as f64);
        opt.step(net.params_mut());
        running = if step == 0 { loss } else { 0.99 * running + 0.01 * loss };
        if (step + 1) % 5_000 == 0 {
            tracing::info!(step = step + 1, loss = running, "policy training");
        }
    }
    Ok(CondPolicy { net, obs_dim, n_actions, cond_mean: mean, cond_std: std })
}

/// Masked softmax over one row of logits.
pub fn masked_probs(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let m = logits.iter().zip(mask).filter(|(_, &ok)| ok).map(|(&l, _)| l).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::Terminal);
    }
    let e: Vec<f64> = logits.iter().zip(mask).map(|(&l, &ok)| if ok { (l - m).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Chooses from logits: argmax over legal actions (lowest index on ties)
/// when `greedy`, otherwise a draw from the masked softmax.
pub fn select_action(logits: &[f64], mask: &[bool], greedy: bool, rng: &mut Rng) -> Result<usize> {
    let p = masked_probs(logits, mask)?;
    if greedy {
        let mut best = None;
        for (i, (&l, &ok)) in logits.iter().zip(mask).enumerate() {
            if ok && best.is_none_or(|(_, bl)| l > bl) {
                best = Some((i, l));
            }
        }
        Ok(best.expect("a legal action exists").0)
    } else {
        Ok(rng.categorical(&p))
    }
}

impl CondPolicy {
    /// Untrained policy with unit condition scaling.
    pub fn new(obs_dim: usize, n_actions: usize, config: &PolicyConfig, rng: &mut Rng) -> Self {
        let spec = MlpSpec::new(obs_dim + 1, config.hidden_size, config.hidden_layers, n_actions, Head::Logits);
        Self { net: Mlp::new(spec, rng), obs_dim, n_actions, cond_mean: 0.0, cond_std: 1.0 }
    }

    pub fn logits_batch(&self, states: &[&[f64]], conds: &[f64]) -> Array2<f64> {
        self.net.predict(&inputs(states, conds, self.cond_mean, self.cond_std))
    }

    pub fn probs(&self, state: &[f64], condition: f64, mask: &[bool]) -> Result<Vec<f64>> {
        let l = self.logits_batch(&[state], &[condition]);
        masked_probs(l.row(0).as_slice().expect("contiguous"), mask)
    }

    pub fn act(&self, state: &[f64], condition: f64, mask: &[bool], rng: &mut Rng, greedy: bool) -> Result<usize> {
        if state.len() != self.obs_dim {
            return Err(Error::Shape(format!("state has {} entries, policy expects {}", state.len(), self.obs_dim)));
        }
        let l = self.logits_batch(&[state], &[condition]);
        select_action(l.row(0).as_slice().expect("contiguous"), mask, greedy, rng)
    }

    pub fn state(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        self.net.state("policy", &mut out);
        out.push(("cond_norm".into(), ndarray::array![[self.cond_mean, self.cond_std]]));
        out
    }

    pub fn load_state(&mut self, src: &HashMap<String, Array2<f64>>) -> Result<()> {
        self.net.load_state("policy", src)?;
        let n = src.get("cond_norm").ok_or_else(|| Error::Checkpoint("missing `cond_norm`".into()))?;
        self.cond_mean = n[[0, 0]];
        self.cond_std = n[[0, 1]];
        Ok(())
    }
}

/// Rng pair for one evaluation episode.
pub struct EpisodeRngs {
    pub policy: Rng,
    pub env: Rng,
}

impl EpisodeRngs {
    pub fn from_root(root: &Rng) -> Self {
        Self { policy: root.split(0), env: root.split(1) }
    }
}

/// Runs one episode from a fresh reset of `env`.
pub fn rollout(
    policy: &CondPolicy,
    env: &mut AnyEnv,
    target: f64,
    mode: ConditioningMode,
    rngs: &mut EpisodeRngs,
    greedy: bool,
) -> Result<Trajectory> {
    let mut out = rollout_batch(
        policy,
        vec![env.clone()],
        target,
        mode,
        vec![EpisodeRngs { policy: rngs.policy.clone(), env: rngs.env.clone() }],
        greedy,
    )?;
    Ok(out.pop().expect("one episode"))
}

/// Safety cap on episode length; no benchmark episode comes close.
pub const MAX_EPISODE_STEPS: u64 = 100_000;

/// Runs several episodes in lockstep so the network sees one batch per
/// step. Every episode owns its rngs, so results match one-at-a-time runs.
pub fn rollout_batch(
    policy: &CondPolicy,
    mut envs: Vec<AnyEnv>,
    target: f64,
    mode: ConditioningMode,
    mut rngs: Vec<EpisodeRngs>,
    greedy: bool,
) -> Result<Vec<Trajectory>> {
    if !target.is_finite() {
        return Err(Error::Config(format!("target {target} is not finite")));
    }
    let mut trajs: Vec<Trajectory> = envs
        .iter_mut()
        .zip(rngs.iter_mut())
        .map(|(e, r)| {
            let s = e.reset(&mut r.env);
            Trajectory::new(e.id(), mode.as_str(), s.observation)
        })
        .collect();
    let mut conds = vec![target; envs.len()];
    for step in 0u64.. {
        if step == MAX_EPISODE_STEPS {
            return Err(Error::Diverged { stage: "rollout", step, detail: "episode did not terminate".into() });
        }
        let live: Vec<usize> = (0..envs.len()).filter(|&i| !envs[i].is_done()).collect();
        if live.is_empty() {
            break;
        }
        let states: Vec<&[f64]> = live.iter().map(|&i| trajs[i].states.last().expect("has state").as_slice()).collect();
        let c: Vec<f64> = live.iter().map(|&i| conds[i]).collect();
        let logits = policy.logits_batch(&states, &c);
        for (r, &i) in live.iter().enumerate() {
            let mask = envs[i].legal_mask();
            let a = select_action(logits.row(r).as_slice().expect("contiguous"), &mask, greedy, &mut rngs[i].policy)?;
            let t = envs[i].step(a, &mut rngs[i].env)?;
            if mode == ConditioningMode::ReturnToGo {
                conds[i] -= t.reward;
            }
            trajs[i].push(a, t.reward, t.state.observation);
        }
    }
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, EnvFactory};
    use crate::trajectory::EnvId;

    #[test]
    fn masked_probs_ignore_illegal_actions() {
        let p = masked_probs(&[5.0, 0.0, 0.0], &[false, true, true]).unwrap();
        assert_eq!(p, vec![0.0, 0.5, 0.5]);
        assert!(masked_probs(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn greedy_selection_breaks_ties_low_and_respects_mask() {
        let mut rng = Rng::new(0);
        assert_eq!(select_action(&[1.0, 3.0, 3.0], &[true; 3], true, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&[9.0, 3.0, 3.0], &[false, true, true], true, &mut rng).unwrap(), 1);
        for _ in 0..200 {
            assert_ne!(select_action(&[9.0, 0.0, 0.0], &[false, true, true], false, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn flat_training_validates_inputs() {
        let cfg = PolicyConfig { hidden_size: 4, hidden_layers: 1, steps: 2, ..PolicyConfig::default() };
        let s: Vec<&[f64]> = vec![&[0.0], &[1.0]];
        let mut rng = Rng::new(1);
        assert!(train_policy_flat(&s, &[0, 3], &[0.0, 1.0], 3, &cfg, &mut rng).is_err());
        assert!(train_policy_flat(&s, &[0], &[0.0, 1.0], 3, &cfg, &mut rng).is_err());
        assert!(train_policy_flat(&[], &[], &[], 3, &cfg, &mut rng).is_err());
        assert!(train_policy_flat(&s, &[0, 2], &[0.0, 1.0], 3, &cfg, &mut rng).is_ok());
    }

    #[test]
    fn policy_learns_condition_dependent_actions() {
        let cfg = PolicyConfig {
            hidden_size: 16,
            hidden_layers: 1,
            steps: 600,
            learning_rate: 1e-2,
            ..PolicyConfig::default()
        };
        let zero = [0.0];
        let states: Vec<&[f64]> = vec![&zero; 200];
        let actions: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let conds: Vec<f64> = actions.iter().map(|&a| if a == 0 { -1.0 } else { 1.0 }).collect();
        let p = train_policy_flat(&states, &actions, &conds, 2, &cfg, &mut Rng::new(2)).unwrap();
        assert!(p.probs(&zero, -1.0, &[true; 2]).unwrap()[0] > 0.9);
        assert!(p.probs(&zero, 1.0, &[true; 2]).unwrap()[1] > 0.9);
    }

    #[test]
    fn batched_rollouts_match_single_episodes() {
        let factory = EnvFactory::new(EnvId::Gambling, EnvConfig::default()).unwrap();
        let cfg = PolicyConfig { hidden_size: 8, hidden_layers: 1, ..PolicyConfig::default() };
        let policy = CondPolicy::new(1, 3, &cfg, &mut Rng::new(3));
        let root = Rng::new(8);
        let rngs = |e: u64| EpisodeRngs::from_root(&root.split(e));
        let batch = rollout_batch(
            &policy,
            (0..5).map(|_| factory.make()).collect(),
            1.0,
            ConditioningMode::ReturnToGo,
            (0..5).map(rngs).collect(),
            false,
        )
        .unwrap();
        for (e, t) in batch.iter().enumerate() {
            let single =
                rollout(&policy, &mut factory.make(), 1.0, ConditioningMode::ReturnToGo, &mut rngs(e as u64), false)
                    .unwrap();
            assert_eq!(&single, t);
        }
        assert!(rollout_batch(
            &policy,
            vec![factory.make()],
            f64::NAN,
            ConditioningMode::EsperLabel,
            vec![rngs(0)],
            false
        )
        .is_err());
    }

    #[test]
    fn act_rejects_wrong_state_width() {
        let cfg = PolicyConfig { hidden_size: 4, hidden_layers: 1, ..PolicyConfig::default() };
        let policy = CondPolicy::new(2, 3, &cfg, &mut Rng::new(0));
        assert!(policy.act(&[0.0], 1.0, &[true; 3], &mut Rng::new(0), true).is_err());
    }
}
