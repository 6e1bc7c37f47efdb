//! Offline dataset collection with per-episode behavior-policy mixtures.

pub mod policies;

use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::OfflineDataset;
use crate::envs::{AnyEnv, EnvConfig, EnvFactory};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trajectory::{EnvId, Trajectory};
pub use policies::*;

/// Behavior policies with episode-level selection weights.
#[derive(Clone)]
pub struct PolicyMixture {
    components: Vec<(Arc<dyn BehaviorPolicy>, f64)>,
}

impl std::fmt::Debug for PolicyMixture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.components.iter().map(|(p, w)| (p.tag().to_string(), *w))).finish()
    }
}

impl PolicyMixture {
    pub fn new(components: Vec<(Arc<dyn BehaviorPolicy>, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("a mixture needs at least one component".into()));
        }
        if components.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("mixture weights must be nonnegative".into()));
        }
        let total: f64 = components.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self { components })
    }

    pub fn single(policy: Arc<dyn BehaviorPolicy>) -> Self {
        Self { components: vec![(policy, 1.0)] }
    }

    pub fn components(&self) -> &[(Arc<dyn BehaviorPolicy>, f64)] {
        &self.components
    }

    pub fn sample(&self, rng: &mut Rng) -> &Arc<dyn BehaviorPolicy> {
        let weights: Vec<f64> = self.components.iter().map(|(_, w)| *w).collect();
        &self.components[rng.categorical(&weights)].0
    }

    /// Default collectors: gambling random; connect4 half ε-optimal (ε=0.3),
    /// half rightmost exploiter; 2048 half expert, half random.
    pub fn default_for(env: EnvId) -> Self {
        match env {
            EnvId::Gambling => Self::single(Arc::new(random_policy())),
            EnvId::Connect4 => Self {
                components: vec![
                    (Arc::new(C4EpsilonOptimal { epsilon: DEFAULT_C4_EPSILON }), 0.5),
                    (Arc::new(c4_rightmost_exploiter_policy()), 0.5),
                ],
            },
            EnvId::G2048 => {
                Self { components: vec![(Arc::new(g2048_heuristic_expert()), 0.5), (Arc::new(random_policy()), 0.5)] }
            }
        }
    }

    /// Parses `name[=param]:weight` items separated by commas, e.g.
    /// `eps_optimal=0.3:0.5,exploiter:0.5`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut components: Vec<(Arc<dyn BehaviorPolicy>, f64)> = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (head, weight) = item
                .rsplit_once(':')
                .ok_or_else(|| Error::Config(format!("mixture item `{item}` lacks a `:weight`")))?;
            let weight: f64 = weight.parse().map_err(|_| Error::Config(format!("bad weight in `{item}`")))?;
            let (name, param) = match head.split_once('=') {
                Some((n, p)) => {
                    (n, Some(p.parse::<f64>().map_err(|_| Error::Config(format!("bad parameter in `{item}`")))?))
                }
                None => (head, None),
            };
            let policy: Arc<dyn BehaviorPolicy> = match name {
                "random" => Arc::new(random_policy()),
                "eps_optimal" => Arc::new(c4_epsilon_optimal_policy(param.unwrap_or(DEFAULT_C4_EPSILON))?),
                "exploiter" => Arc::new(c4_rightmost_exploiter_policy()),
                "expert" => Arc::new(g2048_heuristic_expert()),
                other => return Err(Error::Config(format!("unknown behavior policy `{other}`"))),
            };
            components.push((policy, weight));
        }
        Self::new(components)
    }
}

pub const DEFAULT_C4_EPSILON: f64 = 0.3;

/// Desk-scale step budgets.
pub fn default_steps(env: EnvId) -> usize {
    match env {
        EnvId::Gambling => 100_000,
        EnvId::Connect4 => 200_000,
        EnvId::G2048 => 500_000,
    }
}

#[derive(Clone, Debug)]
pub struct CollectionSpec {
    pub env_id: EnvId,
    pub n_steps: usize,
    pub mixture: PolicyMixture,
    pub seed: u64,
    pub env_config: EnvConfig,
}

impl CollectionSpec {
    pub fn new(env_id: EnvId, n_steps: usize, seed: u64) -> Self {
        Self { env_id, n_steps, mixture: PolicyMixture::default_for(env_id), seed, env_config: EnvConfig::default() }
    }
}

const MIXTURE_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;
const ENV_STREAM: u64 = 2;
const CHUNK: usize = 256;

/// The rng driving the environment in episode `index` of a collection.
pub fn episode_env_rng(seed: u64, index: usize) -> Rng {
    Rng::new(seed).split(index as u64).split(ENV_STREAM)
}

fn run_episode(factory: &EnvFactory, mixture: &PolicyMixture, seed: u64, index: usize) -> Result<Trajectory> {
    let root = Rng::new(seed).split(index as u64);
    let policy = mixture.sample(&mut root.split(MIXTURE_STREAM));
    let mut policy_rng = root.split(POLICY_STREAM);
    let mut env_rng = root.split(ENV_STREAM);
    let mut env = factory.make();
    let first = env.reset(&mut env_rng);
    let mut traj = Trajectory::new(factory.id, policy.tag(), first.observation);
    while !env.is_done() {
        let action = policy.act(&env, &mut policy_rng)?;
        let t = env.step(action, &mut env_rng)?;
        traj.push(action, t.reward, t.state.observation);
    }
    Ok(traj)
}

/// Rolls out episodes until the step count first reaches `n_steps`. Each
/// episode draws from its own child rng, so the output does not depend on
/// how work is scheduled.
pub fn collect(spec: &CollectionSpec) -> Result<OfflineDataset> {
    if spec.n_steps == 0 {
        return Err(Error::Config("n_steps must be positive".into()));
    }
    let factory = EnvFactory::new(spec.env_id, spec.env_config.clone())?;
    let mut trajectories = Vec::new();
    let mut steps = 0usize;
    let mut next = 0usize;
    while steps < spec.n_steps {
        let batch: Vec<Result<Trajectory>> =
            (next..next + CHUNK).into_par_iter().map(|i| run_episode(&factory, &spec.mixture, spec.seed, i)).collect();
        next += CHUNK;
        for t in batch {
            if steps >= spec.n_steps {
                break;
            }
            let t = t?;
            steps += t.len();
            trajectories.push(t);
        }
        tracing::debug!(env = %spec.env_id, steps, episodes = trajectories.len(), "collecting");
    }
    Ok(OfflineDataset::new(spec.env_id, 1.0, spec.seed, trajectories))
}

/// Re-simulates episode `index` of a collection from its recorded actions
/// and returns the reconstructed trajectory.
pub fn replay(factory: &EnvFactory, seed: u64, index: usize, original: &Trajectory) -> Result<Trajectory> {
    let mut env_rng = episode_env_rng(seed, index);
    let mut env: AnyEnv = factory.make();
    let first = env.reset(&mut env_rng);
    let mut traj = Trajectory::new(factory.id, original.policy_tag.clone(), first.observation);
    for &a in &original.actions {
        let t = env.step(a, &mut env_rng)?;
        traj.push(a, t.reward, t.state.observation);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gambling_collection_has_single_step_episodes() {
        let ds = collect(&CollectionSpec::new(EnvId::Gambling, 100_000, 3)).unwrap();
        assert_eq!(ds.n_steps(), 100_000);
        assert!(ds.trajectories.iter().all(|t| t.len() == 1));
        let mut counts = [0usize; 3];
        for t in &ds.trajectories {
            counts[t.actions[0]] += 1;
        }
        let sigma = (100_000.0f64 / 3.0 * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - 100_000.0 / 3.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn gambling_returns_match_analytic_distribution() {
        let n = 60_000usize;
        let ds = collect(&CollectionSpec::new(EnvId::Gambling, n, 5)).unwrap();
        for (value, p) in [(5.0, 1.0 / 6.0), (-15.0, 1.0 / 6.0), (-6.0, 1.0 / 6.0), (1.0, 1.0 / 2.0)] {
            let k = ds.trajectories.iter().filter(|t| t.rewards[0] == value).count() as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((k - n as f64 * p).abs() < 3.0 * sigma, "return {value}: {k}");
        }
    }

    #[test]
    fn same_spec_gives_identical_bytes() {
        let spec = CollectionSpec::new(EnvId::G2048, 3_000, 11);
        let mut a = Vec::new();
        let mut b = Vec::new();
        collect(&spec).unwrap().write_jsonl(&mut a).unwrap();
        collect(&spec).unwrap().write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stops_at_first_episode_boundary_past_budget() {
        let ds = collect(&CollectionSpec::new(EnvId::G2048, 1_000, 2)).unwrap();
        let n = ds.n_steps();
        let last = ds.trajectories.last().unwrap().len();
        assert!(n >= 1_000 && n - last < 1_000);
    }

    #[test]
    fn trajectories_replay_exactly() {
        let spec = CollectionSpec::new(EnvId::G2048, 2_000, 9);
        let ds = collect(&spec).unwrap();
        let factory = EnvFactory::new(EnvId::G2048, EnvConfig::default()).unwrap();
        for (i, t) in ds.trajectories.iter().enumerate() {
            assert_eq!(&replay(&factory, spec.seed, i, t).unwrap(), t);
        }
    }

    #[test]
    fn each_trajectory_has_one_policy_tag() {
        let ds = collect(&CollectionSpec::new(EnvId::G2048, 20_000, 4)).unwrap();
        let experts = ds.trajectories.iter().filter(|t| t.policy_tag == "expert").count() as f64;
        let n = ds.len() as f64;
        assert!(ds.trajectories.iter().all(|t| t.policy_tag == "expert" || t.policy_tag == "random"));
        // Expert episodes are shorter, so they are slightly over-represented at a fixed step budget.
        assert!((experts / n - 0.5).abs() < 0.1, "{experts} of {n}");
    }

    #[test]
    fn mixture_parser_accepts_parameters_and_rejects_bad_weights() {
        let m = PolicyMixture::parse("eps_optimal=0.1:0.25, exploiter:0.75").unwrap();
        assert_eq!(m.components().len(), 2);
        assert_eq!(m.components()[0].0.tag(), "eps_optimal");
        assert!(PolicyMixture::parse("random:0.5").is_err());
        assert!(PolicyMixture::parse("random:1.5,expert:-0.5").is_err());
        assert!(PolicyMixture::parse("nobody:1").is_err());
    }

    #[test]
    fn random_policy_is_legal_everywhere() {
        let mut rng = Rng::new(1);
        let factory = EnvFactory::new(EnvId::G2048, EnvConfig::default()).unwrap();
        for _ in 0..50 {
            let mut env = factory.make();
            env.reset(&mut rng);
            while !env.is_done() {
                let a = random_policy().act(&env, &mut rng).unwrap();
                assert!(env.legal_mask()[a]);
                env.step(a, &mut rng).unwrap();
            }
        }
    }
}
