//! End-to-end orchestration: collect, cluster, label, train both policies,
//! evaluate, report.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::{save_codes, save_models, save_policy};
use crate::datagen::{collect, default_steps, CollectionSpec, PolicyMixture};
use crate::dataset::OfflineDataset;
use crate::envs::{EnvConfig, EnvFactory};
use crate::error::{Error, Result};
use crate::esper::{
    adversarial_train, code_features, independence_gap, label_returns, EpochTelemetry, EsperConfig, EsperModels,
    GapConfig, Histogram, ReturnLabeledDataset,
};
use crate::eval::{evaluate_sweep, EvalReport, SweepSpec, Targets};
use crate::policy::{return_to_go_conditions, train_policy, CondPolicy, ConditioningMode, PolicyConfig};
use crate::rng::Rng;
use crate::trajectory::EnvId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub env: EnvId,
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { env: EnvId::Gambling, seeds: vec![0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Connect4Section {
    pub width: usize,
    pub height: usize,
    pub slip_prob: f64,
    pub opponent_first: bool,
    pub table_bits: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct G2048Section {
    pub target_exponent: u8,
    pub spawn: bool,
}

impl Default for Connect4Section {
    fn default() -> Self {
        let e = EnvConfig::default();
        Self {
            width: e.c4_width,
            height: e.c4_height,
            slip_prob: e.c4_slip_prob,
            opponent_first: e.c4_opponent_first,
            table_bits: e.c4_table_bits,
        }
    }
}

impl Default for G2048Section {
    fn default() -> Self {
        let e = EnvConfig::default();
        Self { target_exponent: e.g2048_target_exponent, spawn: e.g2048_spawn }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Defaults to the desk-scale budget of the environment.
    pub steps: Option<usize>,
    /// Mixture string such as `expert:0.5,random:0.5`.
    pub mixture: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct EvalSection {
    pub targets: Targets,
    pub episodes_per_target: Option<usize>,
    pub greedy: bool,
    pub gap: bool,
}

/// Full pipeline configuration; one TOML section per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub connect4: Connect4Section,
    pub g2048: G2048Section,
    pub data: DataSection,
    pub esper: EsperConfig,
    pub policy: PolicyConfig,
    pub eval: EvalSection,
    pub gap: GapConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_env(EnvId::Gambling)
    }
}

impl PipelineConfig {
    /// Full-size hyperparameters for `env`.
    pub fn for_env(env: EnvId) -> Self {
        Self {
            run: RunSection { env, seeds: vec![0] },
            connect4: Connect4Section::default(),
            g2048: G2048Section::default(),
            data: DataSection::default(),
            esper: EsperConfig::for_env(env),
            policy: PolicyConfig::default(),
            eval: EvalSection { gap: env == EnvId::Gambling, ..Default::default() },
            gap: GapConfig::default(),
        }
    }

    /// Parses a TOML config. Keys left out take the defaults of the
    /// environment named in `[run]`, not those of gambling.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let user: toml::Table = toml::from_str(text).map_err(|e| err(&e))?;
        let run: RunSection = match user.get("run") {
            Some(v) => v.clone().try_into().map_err(|e| err(&e))?,
            None => RunSection::default(),
        };
        let mut merged = toml::Table::try_from(Self::for_env(run.env)).map_err(|e| err(&e))?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e| err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.esper.validate()?;
        EnvFactory::new(self.run.env, self.env_config())?;
        if let Some(m) = &self.data.mixture {
            PolicyMixture::parse(m)?;
        }
        if self.data.steps == Some(0) {
            return Err(Error::Config("data.steps must be positive".into()));
        }
        if self.policy.steps == 0 || self.policy.batch_size == 0 || self.policy.hidden_layers == 0 {
            return Err(Error::Config("policy steps, batch size and depth must be positive".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must name at least one seed".into()));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            c4_width: self.connect4.width,
            c4_height: self.connect4.height,
            c4_slip_prob: self.connect4.slip_prob,
            c4_opponent_first: self.connect4.opponent_first,
            c4_table_bits: self.connect4.table_bits,
            g2048_target_exponent: self.g2048.target_exponent,
            g2048_spawn: self.g2048.spawn,
        }
    }

    pub fn factory(&self) -> Result<EnvFactory> {
        EnvFactory::new(self.run.env, self.env_config())
    }

    pub fn collection_spec(&self, seed: u64) -> Result<CollectionSpec> {
        let mixture = match &self.data.mixture {
            Some(m) => PolicyMixture::parse(m)?,
            None => PolicyMixture::default_for(self.run.env),
        };
        Ok(CollectionSpec {
            env_id: self.run.env,
            n_steps: self.data.steps.unwrap_or_else(|| default_steps(self.run.env)),
            mixture,
            seed,
            env_config: self.env_config(),
        })
    }

    pub fn sweep_spec(&self, seed: u64) -> SweepSpec {
        SweepSpec {
            targets: self.eval.targets.clone(),
            episodes_per_target: self
                .eval
                .episodes_per_target
                .unwrap_or_else(|| SweepSpec::default_episodes(self.run.env)),
            seed: stage_seed(seed, Stage::Eval),
            greedy: self.eval.greedy,
        }
    }

    /// Short content hash of `(config, seed)` used in artifact names.
    pub fn artifact_hash(&self, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        h.update(seed.to_le_bytes());
        hex(&h.finalize()[..6])
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 prefix of a dataset's serialized form.
pub fn dataset_hash(ds: &OfflineDataset) -> Result<String> {
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf)?;
    Ok(hex(&Sha256::digest(&buf)[..8]))
}

#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Cluster = 1,
    Label = 2,
    Codes = 3,
    Policy = 4,
    Eval = 5,
    Gap = 6,
}

/// Seed of a pipeline stage, derived from the run seed.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    Rng::new(seed).split(stage as u64).seed()
}

/// Everything one seed of the pipeline produces.
pub struct ExperimentResult {
    pub seed: u64,
    pub dataset_hash: String,
    pub models: EsperModels,
    pub telemetry: Vec<EpochTelemetry>,
    pub labeled: ReturnLabeledDataset,
    pub esper_policy: CondPolicy,
    pub baseline_policy: CondPolicy,
    pub esper: EvalReport,
    pub baseline: EvalReport,
    pub timings: Vec<(String, f64)>,
}

/// Trains the clustering models on `ds`.
pub fn cluster_stage(
    cfg: &PipelineConfig,
    ds: &OfflineDataset,
    n_actions: usize,
    seed: u64,
) -> Result<(EsperModels, Vec<EpochTelemetry>)> {
    let mut init = Rng::new(stage_seed(seed, Stage::Cluster));
    let mut models = EsperModels::new(ds.obs_dim(), n_actions, cfg.esper.clone(), &mut init)?;
    let mut rng = init.split(1);
    let telemetry = adversarial_train(&mut models, ds, &mut rng)?;
    Ok((models, telemetry))
}

/// Fits the return predictor of `models` and labels every step of `ds`.
pub fn label_stage(models: &mut EsperModels, ds: &OfflineDataset, seed: u64) -> Result<ReturnLabeledDataset> {
    let mut rng = Rng::new(stage_seed(seed, Stage::Label));
    label_returns(models, ds, stage_seed(seed, Stage::Codes), &mut rng)
}

/// Clusters and labels `ds`, returning the trained models and labels.
pub fn run_esper(
    cfg: &PipelineConfig,
    ds: &OfflineDataset,
    n_actions: usize,
    seed: u64,
) -> Result<(EsperModels, Vec<EpochTelemetry>, ReturnLabeledDataset)> {
    let (mut models, telemetry) = cluster_stage(cfg, ds, n_actions, seed)?;
    let labeled = label_stage(&mut models, ds, seed)?;
    Ok((models, telemetry, labeled))
}

/// Runs clustering, labeling, both policies and both sweeps on `ds`.
pub fn run_on_dataset(cfg: &PipelineConfig, ds: &OfflineDataset, seed: u64) -> Result<ExperimentResult> {
    let factory = cfg.factory()?;
    let n_actions = factory.n_actions();
    let mut timings = Vec::new();
    let t = Instant::now();
    let (models, telemetry, labeled) = run_esper(cfg, ds, n_actions, seed)?;
    timings.push(("cluster+label".to_string(), t.elapsed().as_secs_f64()));

    let rtg = return_to_go_conditions(ds);
    let t = Instant::now();
    let esper_policy =
        train_policy(ds, &labeled.labels, n_actions, &cfg.policy, &mut Rng::new(stage_seed(seed, Stage::Policy)))?;
    let baseline_policy =
        train_policy(ds, &rtg, n_actions, &cfg.policy, &mut Rng::new(stage_seed(seed, Stage::Policy)))?;
    timings.push(("train".to_string(), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let spec = cfg.sweep_spec(seed);
    let hash = dataset_hash(ds)?;
    let mut esper =
        evaluate_sweep(&esper_policy, &factory, &spec, ConditioningMode::EsperLabel, &labeled.flat_labels())?;
    let flat_rtg: Vec<f64> = rtg.iter().flatten().copied().collect();
    let mut baseline = evaluate_sweep(&baseline_policy, &factory, &spec, ConditioningMode::ReturnToGo, &flat_rtg)?;
    timings.push(("eval".to_string(), t.elapsed().as_secs_f64()));
    esper.dataset_hash = hash.clone();
    baseline.dataset_hash = hash.clone();
    esper.seeds = vec![seed];
    baseline.seeds = vec![seed];

    if cfg.eval.gap {
        let t = Instant::now();
        let gs = cfg.esper.group_size();
        let codes: Vec<Vec<Vec<f64>>> =
            labeled.codes.iter().map(|traj| traj.iter().map(|c| code_features(c, gs)).collect()).collect();
        let gap_cfg = GapConfig { seed: stage_seed(seed, Stage::Gap), ..cfg.gap.clone() };
        esper.independence_gap = Some(independence_gap(ds, &codes, n_actions, &gap_cfg)?);
        let returns: Vec<Vec<Vec<f64>>> = ds
            .trajectories
            .iter()
            .map(|tr| {
                let r: f64 = tr.rewards.iter().sum();
                vec![vec![r]; tr.len()]
            })
            .collect();
        baseline.independence_gap = Some(independence_gap(ds, &returns, n_actions, &gap_cfg)?);
        timings.push(("gap".to_string(), t.elapsed().as_secs_f64()));
    }
    Ok(ExperimentResult {
        seed,
        dataset_hash: hash,
        models,
        telemetry,
        labeled,
        esper_policy,
        baseline_policy,
        esper,
        baseline,
        timings,
    })
}

/// Collects data for `seed` and runs the full pipeline on it.
pub fn run_experiment(cfg: &PipelineConfig, seed: u64) -> Result<(OfflineDataset, ExperimentResult)> {
    cfg.validate()?;
    let t = Instant::now();
    let ds = collect(&cfg.collection_spec(seed)?)?;
    let collect_secs = t.elapsed().as_secs_f64();
    let mut result = run_on_dataset(cfg, &ds, seed)?;
    result.timings.insert(0, ("collect".to_string(), collect_secs));
    Ok((ds, result))
}

/// One row of a data-scaling table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub method: String,
    pub fraction: f64,
    pub seed: u64,
    pub alignment_mae: Option<f64>,
    pub max_performance: f64,
}

/// Re-runs clustering, labeling, training and evaluation on the leading
/// `fraction` of each seed's dataset.
pub fn data_scaling_study(cfg: &PipelineConfig, fractions: &[f64]) -> Result<Vec<ScalingRow>> {
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Config("fractions must lie in (0, 1]".into()));
    }
    let mut rows = Vec::new();
    for &seed in &cfg.run.seeds {
        let full = collect(&cfg.collection_spec(seed)?)?;
        for &fraction in fractions {
            let ds = full.subset(fraction);
            let r = run_on_dataset(cfg, &ds, seed)?;
            for rep in [&r.esper, &r.baseline] {
                rows.push(ScalingRow {
                    method: rep.method.clone(),
                    fraction,
                    seed,
                    alignment_mae: rep.alignment_mae,
                    max_performance: rep.max_performance,
                });
            }
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "env,method,target,mean,std,n,in_distribution";

/// Report rows in the fixed CSV layout.
pub fn report_csv(reports: &[&EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        for row in &r.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.env, r.method, row.target, row.mean, row.std, row.n, row.in_distribution
            ));
        }
    }
    out
}

/// Stage names used in error messages and exit codes.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

pub fn tag<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

/// Paths of the files written by [`run_pipeline`].
#[derive(Clone, Debug, Serialize)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Both sweeps of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReports {
    pub seed: u64,
    pub esper: EvalReport,
    pub baseline: EvalReport,
}

/// `bin_lo,bin_hi,count` rows of a condition histogram.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", h.edges[i], h.edges[i + 1], c));
    }
    out
}

/// Runs every seed of `cfg` and writes datasets, checkpoints, labels,
/// reports and the CSV under `out_dir`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> std::result::Result<(Artifacts, Vec<SeedReports>), StageError> {
    tag("config", cfg.validate())?;
    tag("io", std::fs::create_dir_all(out_dir).map_err(Error::from))?;
    let env = cfg.run.env;
    let mut files = Vec::new();
    let mut results = Vec::new();
    for &seed in &cfg.run.seeds {
        let h = cfg.artifact_hash(seed);
        let path = |stem: &str, ext: &str| out_dir.join(format!("{env}-{stem}-{h}.{ext}"));
        let ds = tag("gen-data", cfg.collection_spec(seed).and_then(|s| collect(&s)))?;
        let p = path("dataset", "jsonl");
        tag("gen-data", ds.save(&p))?;
        files.push(p);
        let r = run_on_dataset(cfg, &ds, seed).map_err(|e| {
            let stage = match &e {
                Error::Diverged { stage, .. } => stage,
                _ => "pipeline",
            };
            StageError { stage, source: e }
        })?;
        let p = path("esper", "ckpt");
        tag("cluster", save_models(&p, env, &r.models))?;
        files.push(p);
        let p = path("codes", "json");
        tag("cluster", save_codes(&p, &r.labeled.codes))?;
        files.push(p);
        let p = path("telemetry", "json");
        tag("cluster", write_json(&p, &r.telemetry))?;
        files.push(p);
        let p = path("labels", "jsonl");
        tag(
            "label",
            std::fs::File::create(&p).map_err(Error::from).and_then(|f| {
                let mut w = std::io::BufWriter::new(f);
                r.labeled.write_records(&ds, &mut w)?;
                w.flush().map_err(Error::from)
            }),
        )?;
        files.push(p);
        let p = path("labels-hist", "json");
        tag("label", write_json(&p, &r.labeled.histogram(20)))?;
        files.push(p);
        for (mode, pol) in
            [(ConditioningMode::EsperLabel, &r.esper_policy), (ConditioningMode::ReturnToGo, &r.baseline_policy)]
        {
            let p = path(&format!("policy-{}", mode.as_str()), "ckpt");
            tag("train", save_policy(&p, env, mode, &cfg.policy, pol))?;
            files.push(p);
        }
        for rep in [&r.esper, &r.baseline] {
            let p = path(&format!("report-{}", rep.method), "json");
            tag("eval", write_json(&p, rep))?;
            files.push(p);
            let p = path(&format!("hist-{}", rep.method), "csv");
            tag("eval", std::fs::write(&p, histogram_csv(&rep.histogram)).map_err(Error::from))?;
            files.push(p);
        }
        results.push(SeedReports { seed, esper: r.esper, baseline: r.baseline });
    }
    let h = cfg.artifact_hash(cfg.run.seeds[0]);
    let p = out_dir.join(format!("{env}-report-{h}.csv"));
    let refs: Vec<&EvalReport> = results.iter().flat_map(|r| [&r.esper, &r.baseline]).collect();
    tag("eval", std::fs::write(&p, report_csv(&refs)).map_err(Error::from))?;
    files.push(p);
    Ok((Artifacts { dir: out_dir.to_path_buf(), files }, results))
}

/// One acceptance verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn line(name: &str, pass: bool, detail: String) -> CheckLine {
    CheckLine { name: name.into(), pass, detail }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Desk-scale acceptance numbers for `env`, averaged over seeds.
pub fn acceptance_checks(env: EnvId, results: &[SeedReports]) -> Vec<CheckLine> {
    let gap = mean(results.iter().map(|r| r.esper.max_performance - r.baseline.max_performance));
    let esper_max = mean(results.iter().map(|r| r.esper.max_performance));
    match env {
        EnvId::Gambling => {
            let at_one = mean(
                results.iter().filter_map(|r| r.baseline.rows.iter().find(|row| row.target == 1.0)).map(|row| row.mean),
            );
            let mut out = vec![
                line("esper max performance >= 0.95", esper_max >= 0.95, format!("{esper_max:.3}")),
                line("baseline at target 1 in [-0.35, 0.05]", (-0.35..=0.05).contains(&at_one), format!("{at_one:.3}")),
            ];
            let code_gap = mean(results.iter().filter_map(|r| r.esper.independence_gap));
            let ret_gap = mean(results.iter().filter_map(|r| r.baseline.independence_gap));
            if !code_gap.is_nan() && !ret_gap.is_nan() {
                out.push(line("independence gap of returns > 0.1", ret_gap > 0.1, format!("{ret_gap:.4}")));
                out.push(line("independence gap of codes <= 0.02", code_gap <= 0.02, format!("{code_gap:.4}")));
            }
            out
        }
        EnvId::Connect4 => {
            let mae = mean(results.iter().filter_map(|r| r.esper.alignment_mae));
            vec![
                line("esper minus baseline max performance >= 0.15", gap >= 0.15, format!("{gap:.3}")),
                line("esper alignment mae <= 0.25", mae <= 0.25, format!("{mae:.3}")),
            ]
        }
        EnvId::G2048 => vec![line("esper minus baseline max performance >= 0.1", gap >= 0.1, format!("{gap:.3}"))],
    }
}
