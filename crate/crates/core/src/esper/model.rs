use std::collections::HashMap;

use ndarray::{s, Array2};

use super::config::EsperConfig;
use crate::error::{Error, Result};
use crate::nn::{
    gumbel_backward, gumbel_softmax_with_noise, hcat, AdamW, AdamWConfig, GumbelSample, Head, Lstm, LstmCache, Mlp,
    MlpCache, MlpSpec, Module, Tensor,
};
use crate::rng::Rng;
use crate::trajectory::Trajectory;

/// Row layout of a batch of trajectories flattened step by step.
#[derive(Clone, Debug)]
pub struct Layout {
    pub lens: Vec<usize>,
    pub offsets: Vec<usize>,
    pub rows: usize,
}

impl Layout {
    pub fn new(trajs: &[&Trajectory]) -> Self {
        let lens: Vec<usize> = trajs.iter().map(|t| t.len()).collect();
        let mut offsets = Vec::with_capacity(lens.len());
        let mut rows = 0;
        for &l in &lens {
            offsets.push(rows);
            rows += l;
        }
        Self { lens, offsets, rows }
    }

    pub fn max_len(&self) -> usize {
        self.lens.iter().copied().max().unwrap_or(0)
    }

    /// `(trajectory, t)` for every row.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.lens.iter().enumerate().flat_map(|(b, &l)| (0..l).map(move |t| (b, t)))
    }
}

/// `[s_t, onehot(a_t)]` per step.
pub fn step_inputs(trajs: &[&Trajectory], obs_dim: usize, n_actions: usize) -> Array2<f64> {
    let rows: usize = trajs.iter().map(|t| t.len()).sum();
    let mut x = Array2::zeros((rows, obs_dim + n_actions));
    let mut r = 0;
    for t in trajs {
        for (k, &a) in t.actions.iter().enumerate() {
            for (j, &v) in t.states[k].iter().enumerate() {
                x[[r, j]] = v;
            }
            x[[r, obs_dim + a]] = 1.0;
            r += 1;
        }
    }
    x
}

/// `s_{t+1}` per step.
pub fn next_states(trajs: &[&Trajectory], obs_dim: usize) -> Array2<f64> {
    let rows: usize = trajs.iter().map(|t| t.len()).sum();
    let mut y = Array2::zeros((rows, obs_dim));
    let mut r = 0;
    for t in trajs {
        for k in 0..t.len() {
            for (j, &v) in t.states[k + 1].iter().enumerate() {
                y[[r, j]] = v;
            }
            r += 1;
        }
    }
    y
}

/// Per-step embedding, a recurrence run backwards in time, and a head
/// producing grouped code logits. The code at step t depends only on the
/// suffix starting at t.
#[derive(Clone, Debug)]
pub struct ClusterEncoder {
    pub embed: Mlp,
    pub lstm: Lstm,
    pub head: Mlp,
}

pub struct EncoderCache {
    layout: Layout,
    embed: MlpCache,
    lstm: LstmCache,
    head: MlpCache,
    sample: GumbelSample,
}

impl ClusterEncoder {
    pub fn new(input: usize, config: &EsperConfig, rng: &mut Rng) -> Self {
        let h = config.hidden_size;
        Self {
            embed: Mlp::new(MlpSpec::new(input, h, 1, h, Head::GaussianMean), rng),
            lstm: Lstm::new(h, config.lstm_hidden_size, rng),
            head: Mlp::new(
                MlpSpec::new(config.lstm_hidden_size, h, config.cluster_hidden_layers, config.rep_size, Head::Logits),
                rng,
            ),
        }
    }

    fn to_sequence(layout: &Layout, flat: &Array2<f64>) -> Vec<Array2<f64>> {
        let width = flat.ncols();
        (0..layout.max_len())
            .map(|j| {
                let mut x = Array2::zeros((layout.lens.len(), width));
                for (b, &l) in layout.lens.iter().enumerate() {
                    if j < l {
                        x.row_mut(b).assign(&flat.row(layout.offsets[b] + l - 1 - j));
                    }
                }
                x
            })
            .collect()
    }

    fn from_sequence(layout: &Layout, seq: &[Array2<f64>]) -> Array2<f64> {
        let width = seq.first().map_or(0, |x| x.ncols());
        let mut flat = Array2::zeros((layout.rows, width));
        for (b, &l) in layout.lens.iter().enumerate() {
            for t in 0..l {
                flat.row_mut(layout.offsets[b] + t).assign(&seq[l - 1 - t].row(b));
            }
        }
        flat
    }

    /// Code logits with frozen parameters (batch norm in eval mode).
    pub fn logits(&self, trajs: &[&Trajectory], inputs: &Array2<f64>) -> Array2<f64> {
        let layout = Layout::new(trajs);
        let e = self.embed.predict(inputs);
        let (hs, _) = self.lstm.forward(&Self::to_sequence(&layout, &e));
        self.head.predict(&Self::from_sequence(&layout, &hs))
    }

    pub fn forward_train(
        &mut self,
        trajs: &[&Trajectory],
        inputs: &Array2<f64>,
        noise: &Array2<f64>,
        config: &EsperConfig,
    ) -> (Array2<f64>, EncoderCache) {
        let layout = Layout::new(trajs);
        let (e, embed) = self.embed.forward(inputs, true);
        let (hs, lstm) = self.lstm.forward(&Self::to_sequence(&layout, &e));
        let (logits, head) = self.head.forward(&Self::from_sequence(&layout, &hs), true);
        let sample = gumbel_softmax_with_noise(
            &logits,
            noise,
            config.rep_groups,
            config.gumbel_temperature,
            config.straight_through,
        );
        (sample.output.clone(), EncoderCache { layout, embed, lstm, head, sample })
    }

    pub fn backward(&mut self, cache: &EncoderCache, dcodes: &Array2<f64>, window: usize) {
        let dlogits = gumbel_backward(&cache.sample, dcodes);
        let dh = self.head.backward(&cache.head, &dlogits);
        let dhs = Self::to_sequence_rev(&cache.layout, &dh);
        let dxs = self.lstm.backward(&cache.lstm, &dhs, Some(window));
        let de = Self::from_sequence_rev(&cache.layout, &dxs);
        self.embed.backward(&cache.embed, &de);
    }

    // The flat <-> sequence maps are permutations, so their adjoints reuse them.
    fn to_sequence_rev(layout: &Layout, flat: &Array2<f64>) -> Vec<Array2<f64>> {
        Self::to_sequence(layout, flat)
    }

    fn from_sequence_rev(layout: &Layout, seq: &[Array2<f64>]) -> Array2<f64> {
        Self::from_sequence(layout, seq)
    }
}

impl Module for ClusterEncoder {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.embed.params_mut();
        v.extend(self.lstm.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    fn state(&self, prefix: &str, out: &mut Vec<(String, Array2<f64>)>) {
        self.embed.state(&format!("{prefix}.embed"), out);
        self.lstm.state(&format!("{prefix}.lstm"), out);
        self.head.state(&format!("{prefix}.head"), out);
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, Array2<f64>>) -> Result<()> {
        self.embed.load_state(&format!("{prefix}.embed"), src)?;
        self.lstm.load_state(&format!("{prefix}.lstm"), src)?;
        self.head.load_state(&format!("{prefix}.head"), src)
    }
}

/// Every network of the clustering and labeling phases plus their optimizers.
#[derive(Clone, Debug)]
pub struct EsperModels {
    pub config: EsperConfig,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub encoder: ClusterEncoder,
    pub action: Mlp,
    pub transition: Mlp,
    pub ret: Mlp,
    pub theta_opt: AdamW,
    pub phi_opt: AdamW,
    pub psi_opt: AdamW,
    /// Standardization of return-predictor targets.
    pub ret_mean: f64,
    pub ret_std: f64,
}

/// Losses of one clustering batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterLosses {
    pub l_theta: f64,
    pub l_phi: f64,
    pub action_ce: f64,
}

impl EsperModels {
    pub fn new(obs_dim: usize, n_actions: usize, config: EsperConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let encoder = ClusterEncoder::new(obs_dim + n_actions, &config, rng);
        let action = Mlp::new(
            MlpSpec::new(obs_dim + config.rep_size, h, config.action_hidden_layers, n_actions, Head::Logits),
            rng,
        );
        let transition = Mlp::new(
            MlpSpec::new(
                obs_dim + n_actions + config.rep_size,
                h,
                config.transition_hidden_layers,
                obs_dim,
                Head::GaussianMean,
            ),
            rng,
        );
        let ret = Mlp::new(
            MlpSpec::new(config.rep_size + obs_dim + n_actions, h, config.return_hidden_layers, 1, Head::GaussianMean),
            rng,
        );
        let opt = |lr| AdamW::new(AdamWConfig { lr, weight_decay: config.weight_decay, ..Default::default() });
        Ok(Self {
            theta_opt: opt(config.learning_rate),
            phi_opt: opt(config.learning_rate),
            psi_opt: opt(config.label_learning_rate),
            config,
            obs_dim,
            n_actions,
            encoder,
            action,
            transition,
            ret,
            ret_mean: 0.0,
            ret_std: 1.0,
        })
    }

    /// Gumbel noise for every row of a batch.
    pub fn noise(&self, rows: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, self.config.rep_size), |_| rng.gumbel())
    }

    /// One alternating update: a θ step (encoder and action predictor) on
    /// `β_act·CE − β_adv·NLL`, then a φ step (transition predictor) on `NLL`,
    /// both from the same forward pass.
    pub fn train_batch(&mut self, trajs: &[&Trajectory], rng: &mut Rng) -> Result<ClusterLosses> {
        let c = self.config.clone();
        let inputs = step_inputs(trajs, self.obs_dim, self.n_actions);
        let targets_next = next_states(trajs, self.obs_dim);
        let layout = Layout::new(trajs);
        let noise = self.noise(layout.rows, rng);
        let (codes, enc_cache) = self.encoder.forward_train(trajs, &inputs, &noise, &c);
        let past_act = sample_past_rows(&layout, rng);
        let past_dyn = sample_past_rows(&layout, rng);
        let states = inputs.slice(s![.., ..self.obs_dim]).to_owned();
        let actions: Vec<usize> = trajs.iter().flat_map(|t| t.actions.iter().copied()).collect();

        let act_in = hcat(&[&states, &codes.select(ndarray::Axis(0), &past_act)]);
        let (logits, act_cache) = self.action.forward(&act_in, true);
        let (ce, dlogits) = crate::nn::softmax_cross_entropy(&logits, &actions);

        let dyn_in = hcat(&[&inputs, &codes.select(ndarray::Axis(0), &past_dyn)]);
        let (pred, dyn_cache) = self.transition.forward(&dyn_in, true);
        let (nll, dpred) = crate::nn::gaussian_nll_unit_var(&pred, &targets_next);

        let l_theta = c.beta_act * ce - c.beta_adv * nll;
        if !l_theta.is_finite() || !nll.is_finite() {
            return Err(Error::Diverged {
                stage: "cluster",
                step: self.theta_opt.step,
                detail: format!("action CE {ce}, transition NLL {nll}"),
            });
        }

        self.encoder.zero_grad();
        self.action.zero_grad();
        self.transition.zero_grad();
        let d_act_in = self.action.backward(&act_cache, &(dlogits * c.beta_act));
        let d_dyn_in = self.transition.backward(&dyn_cache, &dpred);
        let mut dcodes = Array2::zeros(codes.raw_dim());
        let code_act = d_act_in.slice(s![.., self.obs_dim..]);
        let code_dyn = d_dyn_in.slice(s![.., self.obs_dim + self.n_actions..]);
        for (r, (&pa, &pd)) in past_act.iter().zip(&past_dyn).enumerate() {
            let mut row = dcodes.row_mut(pa);
            row += &code_act.row(r);
            let mut row = dcodes.row_mut(pd);
            row.scaled_add(-c.beta_adv, &code_dyn.row(r));
        }
        self.encoder.backward(&enc_cache, &dcodes, c.tbptt_window);

        let mut theta = self.encoder.params_mut();
        theta.extend(self.action.params_mut());
        self.theta_opt.step(theta);
        self.phi_opt.step(self.transition.params_mut());
        Ok(ClusterLosses { l_theta, l_phi: nll, action_ce: ce })
    }

    /// Hard codes per step with caller-supplied noise, parameters frozen.
    pub fn codes_with_noise(&self, trajs: &[&Trajectory], noise: &Array2<f64>) -> GumbelSample {
        let inputs = step_inputs(trajs, self.obs_dim, self.n_actions);
        let logits = self.encoder.logits(trajs, &inputs);
        gumbel_softmax_with_noise(&logits, noise, self.config.rep_groups, self.config.gumbel_temperature, true)
    }

    /// Checksum of the θ-side parameters (encoder and action predictor).
    pub fn theta_checksum(&mut self) -> u64 {
        self.encoder.checksum() ^ self.action.checksum().rotate_left(1)
    }

    pub fn phi_checksum(&mut self) -> u64 {
        self.transition.checksum()
    }

    pub fn state(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        self.encoder.state("encoder", &mut out);
        self.action.state("action", &mut out);
        self.transition.state("transition", &mut out);
        self.ret.state("ret", &mut out);
        out.push(("ret_norm".into(), ndarray::array![[self.ret_mean, self.ret_std]]));
        out
    }

    pub fn load_state(&mut self, src: &HashMap<String, Array2<f64>>) -> Result<()> {
        self.encoder.load_state("encoder", src)?;
        self.action.load_state("action", src)?;
        self.transition.load_state("transition", src)?;
        self.ret.load_state("ret", src)?;
        let norm = src.get("ret_norm").ok_or_else(|| Error::Checkpoint("missing `ret_norm`".into()))?;
        self.ret_mean = norm[[0, 0]];
        self.ret_std = norm[[0, 1]];
        Ok(())
    }
}

/// For every row (trajectory b, step t), the row of a uniformly drawn step
/// in `0..=t` of the same trajectory.
pub fn sample_past_rows(layout: &Layout, rng: &mut Rng) -> Vec<usize> {
    layout.positions().map(|(b, t)| layout.offsets[b] + rng.below(t + 1)).collect()
}

/// Code of a uniformly drawn step in `0..=t`.
pub fn sample_past_assignment<'a, T>(codes: &'a [T], t: usize, rng: &mut Rng) -> &'a T {
    assert!(t < codes.len(), "t out of range");
    &codes[rng.below(t + 1)]
}
