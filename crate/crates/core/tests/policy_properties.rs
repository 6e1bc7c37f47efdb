use esper_core::datagen::{collect, CollectionSpec};
use esper_core::dataset::OfflineDataset;
use esper_core::envs::{EnvConfig, EnvFactory};
use esper_core::esper::{
    assign_clusters, cluster_purity, independence_gap, label_returns, EsperConfig, EsperModels, GapConfig,
};
use esper_core::policy::{
    rollout, select_action, train_policy_flat, CondPolicy, ConditioningMode, EpisodeRngs, PolicyConfig,
};
use esper_core::rng::Rng;
use esper_core::trajectory::{EnvId, Trajectory};

fn small_policy(steps: usize) -> PolicyConfig {
    PolicyConfig { hidden_size: 16, hidden_layers: 2, steps, learning_rate: 1e-2, ..PolicyConfig::default() }
}

#[test]
fn greedy_examples() {
    let mut rng = Rng::new(0);
    assert_eq!(select_action(&[2.0, 1.0, 0.0], &[true; 3], true, &mut rng).unwrap(), 0);
    assert_eq!(select_action(&[9.0, 1.0, 0.0], &[false, true, true], true, &mut rng).unwrap(), 1);
    assert!(select_action(&[0.0; 3], &[false; 3], true, &mut rng).is_err());
}

#[test]
fn sampling_follows_the_masked_softmax() {
    let logits = [0.5, 9.0, -0.2, 1.0];
    let mask = [true, false, true, true];
    let z: f64 = [0.5f64, -0.2, 1.0].iter().map(|l| l.exp()).sum();
    let n = 100_000;
    let mut counts = [0usize; 4];
    let mut rng = Rng::new(1);
    for _ in 0..n {
        counts[select_action(&logits, &mask, false, &mut rng).unwrap()] += 1;
    }
    assert_eq!(counts[1], 0);
    for a in [0, 2, 3] {
        let p = logits[a].exp() / z;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((counts[a] as f64 - n as f64 * p).abs() < 3.0 * sigma);
    }
}

#[test]
fn single_action_data_gives_a_near_deterministic_policy() {
    let zero = [0.0];
    let states: Vec<&[f64]> = vec![&zero; 100];
    let conds: Vec<f64> = (0..100).map(|i| f64::from(i) / 10.0).collect();
    let p = train_policy_flat(&states, &[2; 100], &conds, 3, &small_policy(300), &mut Rng::new(2)).unwrap();
    for c in [-50.0, 0.0, 4.0, 50.0] {
        assert!(p.probs(&zero, c, &[true; 3]).unwrap()[2] >= 0.99);
    }
}

#[test]
fn affine_rescaling_of_conditions_leaves_choices_unchanged() {
    let mut rng = Rng::new(3);
    let states: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.normal(), rng.normal()]).collect();
    let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
    let actions: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let conds: Vec<f64> = actions.iter().map(|&a| a as f64 + 0.1 * rng.normal()).collect();
    let scaled: Vec<f64> = conds.iter().map(|c| 4.0 * c - 7.0).collect();
    let cfg = small_policy(200);
    let a = train_policy_flat(&refs, &actions, &conds, 3, &cfg, &mut Rng::new(4)).unwrap();
    let b = train_policy_flat(&refs, &actions, &scaled, 3, &cfg, &mut Rng::new(4)).unwrap();
    let mut probe = Rng::new(5);
    for _ in 0..50 {
        let s = [probe.normal(), probe.normal()];
        let c = 2.0 * probe.uniform();
        let mut r = Rng::new(0);
        assert_eq!(
            a.act(&s, c, &[true; 3], &mut r, true).unwrap(),
            b.act(&s, 4.0 * c - 7.0, &[true; 3], &mut r, true).unwrap()
        );
    }
}

#[test]
fn rollouts_only_take_legal_actions() {
    let c4 = EnvConfig { c4_width: 5, c4_height: 4, ..EnvConfig::default() };
    for (env, config) in [(EnvId::Connect4, c4), (EnvId::G2048, EnvConfig::default())] {
        let factory = EnvFactory::new(env, config).unwrap();
        let policy = CondPolicy::new(factory.obs_dim(), factory.n_actions(), &small_policy(1), &mut Rng::new(6));
        for e in 0..20 {
            let mut rngs = EpisodeRngs::from_root(&Rng::new(7).split(e));
            // Environments reject illegal actions, so success means every action was legal.
            let t = rollout(&policy, &mut factory.make(), 1.0, ConditioningMode::EsperLabel, &mut rngs, false).unwrap();
            assert!(!t.is_empty());
        }
    }
}

#[test]
fn gambling_modes_behave_identically() {
    let factory = EnvFactory::new(EnvId::Gambling, EnvConfig::default()).unwrap();
    let policy = CondPolicy::new(1, 3, &small_policy(1), &mut Rng::new(8));
    for e in 0..50 {
        let run = |mode| {
            let mut rngs = EpisodeRngs::from_root(&Rng::new(9).split(e));
            rollout(&policy, &mut factory.make(), 1.0, mode, &mut rngs, false).unwrap()
        };
        let (a, b) = (run(ConditioningMode::EsperLabel), run(ConditioningMode::ReturnToGo));
        assert_eq!((a.actions, a.rewards), (b.actions, b.rewards));
    }
}

fn tiny_esper() -> EsperConfig {
    EsperConfig {
        hidden_size: 8,
        lstm_hidden_size: 8,
        rep_size: 6,
        rep_groups: 2,
        label_epochs: 3,
        label_learning_rate: 1e-2,
        ..EsperConfig::default()
    }
}

fn random_traj(len: usize, rng: &mut Rng) -> Trajectory {
    let mut t = Trajectory::new(EnvId::Connect4, "test", vec![rng.normal(), rng.normal()]);
    for _ in 0..len {
        t.push(rng.below(3), rng.normal(), vec![rng.normal(), rng.normal()]);
    }
    t
}

#[test]
fn codes_depend_only_on_the_future() {
    let mut rng = Rng::new(10);
    let models = EsperModels::new(2, 3, tiny_esper(), &mut rng).unwrap();
    let traj = random_traj(8, &mut rng);
    let mut edited = traj.clone();
    for k in 0..3 {
        edited.states[k] = vec![5.0, -5.0];
        edited.actions[k] = (edited.actions[k] + 1) % 3;
    }
    let a = assign_clusters(&models, &traj, &mut Rng::new(11)).unwrap();
    let b = assign_clusters(&models, &edited, &mut Rng::new(11)).unwrap();
    assert_eq!(a[3..], b[3..]);
}

#[test]
fn clustering_steps_only_touch_their_own_side() {
    let mut rng = Rng::new(12);
    let trajs: Vec<Trajectory> = (0..6).map(|_| random_traj(5, &mut rng)).collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();

    let mut m = EsperModels::new(2, 3, tiny_esper(), &mut rng).unwrap();
    m.phi_opt.config.lr = 0.0;
    m.phi_opt.config.weight_decay = 0.0;
    let (theta, phi) = (m.theta_checksum(), m.phi_checksum());
    m.train_batch(&refs, &mut rng).unwrap();
    assert_ne!(m.theta_checksum(), theta);
    assert_eq!(m.phi_checksum(), phi);

    let mut m = EsperModels::new(2, 3, tiny_esper(), &mut rng).unwrap();
    m.theta_opt.config.lr = 0.0;
    m.theta_opt.config.weight_decay = 0.0;
    let (theta, phi) = (m.theta_checksum(), m.phi_checksum());
    m.train_batch(&refs, &mut rng).unwrap();
    assert_eq!(m.theta_checksum(), theta);
    assert_ne!(m.phi_checksum(), phi);
}

#[test]
fn zero_weights_zero_the_clustering_loss() {
    let mut rng = Rng::new(13);
    let trajs: Vec<Trajectory> = (0..4).map(|_| random_traj(3, &mut rng)).collect();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let mut m = EsperModels::new(2, 3, EsperConfig { beta_act: 0.0, beta_adv: 0.0, ..tiny_esper() }, &mut rng).unwrap();
    let l = m.train_batch(&refs, &mut rng).unwrap();
    assert_eq!(l.l_theta, 0.0);
    assert!(l.l_phi > 0.0);
}

#[test]
fn zero_returns_give_zero_labels() {
    let mut rng = Rng::new(14);
    let trajs: Vec<Trajectory> = (0..20)
        .map(|_| {
            let mut t = random_traj(4, &mut rng);
            t.rewards.iter_mut().for_each(|r| *r = 0.0);
            t
        })
        .collect();
    let ds = OfflineDataset::new(EnvId::Connect4, 1.0, 0, trajs);
    let cfg = tiny_esper();
    let eps = cfg.label_eps;
    let mut m = EsperModels::new(2, 3, cfg, &mut rng).unwrap();
    let labeled = label_returns(&mut m, &ds, 1, &mut rng).unwrap();
    assert!(labeled.flat_labels().iter().all(|l| l.abs() <= eps));
}

#[test]
fn constant_codes_leave_no_independence_gap() {
    let ds = collect(&CollectionSpec::new(EnvId::Gambling, 4_000, 15)).unwrap();
    let codes: Vec<Vec<Vec<f64>>> = ds.trajectories.iter().map(|t| vec![vec![1.0, 0.0]; t.len()]).collect();
    let gap = independence_gap(&ds, &codes, 3, &GapConfig::default()).unwrap();
    assert!(gap.abs() <= 0.02, "gap {gap}");
}

#[test]
fn purity_counts_majority_labels() {
    let codes = vec![vec![0], vec![0], vec![1], vec![1]];
    assert_eq!(cluster_purity(&codes, &[0, 0, 1, 2]), 0.75);
    assert_eq!(cluster_purity(&codes, &[5, 5, 6, 6]), 1.0);
}
