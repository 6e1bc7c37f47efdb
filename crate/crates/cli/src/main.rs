use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use esper_core::artifacts::{load_models, load_policy, read_label_records, save_codes, save_models, save_policy};
use esper_core::datagen::{collect, PolicyMixture};
use esper_core::dataset::OfflineDataset;
use esper_core::error::Error;
use esper_core::esper::theorem::{theorem_check, Statistic};
use esper_core::esper::{assign_all, ReturnLabeledDataset};
use esper_core::eval::{evaluate_sweep, gambling_oracle, Targets};
use esper_core::pipeline::{
    acceptance_checks, cluster_stage, data_scaling_study, dataset_hash, label_stage, report_csv, run_pipeline,
    stage_seed, PipelineConfig, Stage, StageError,
};
use esper_core::policy::{return_to_go_conditions, train_policy_flat, ConditioningMode};
use esper_core::rng::Rng;
use esper_core::trajectory::EnvId;

#[derive(Parser)]
#[command(name = "esper", version, about = "Offline return-conditioned RL with stochasticity-independent labels")]
struct Cli {
    /// Run seed; overrides `run.seeds` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset.
    GenData {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// e.g. `expert:0.5,random:0.5`
        #[arg(long)]
        mixture: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the adversarial clustering models and write codes.
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
    },
    /// Fit the return predictor and relabel every step.
    Label {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        hist: Option<PathBuf>,
    },
    /// Train a conditioned policy.
    Train {
        #[arg(long, default_value = "esper")]
        mode: ConditioningMode,
        /// Label records (esper mode).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Dataset (rtg mode).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep targets with a trained policy.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        /// Label records giving the esper training conditions.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Dataset giving the rtg training conditions.
        #[arg(long)]
        data: Option<PathBuf>,
        /// `auto` or a comma-separated list.
        #[arg(long, allow_hyphen_values = true)]
        targets: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Alignment versus dataset fraction.
    Scaling {
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.25,1.0")]
        fractions: Vec<f64>,
    },
    /// Every stage end to end.
    Run {
        /// Exit with status 4 when the environment's acceptance numbers are missed.
        #[arg(long)]
        check: bool,
    },
    /// Exact gambling tables and the independence enumeration.
    Oracle,
}

enum Failure {
    Config(String),
    Stage(StageError),
    Check,
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        match e.source {
            Error::Config(m) => Failure::Config(m),
            _ => Failure::Stage(e),
        }
    }
}

fn stage<T>(name: &'static str, r: esper_core::error::Result<T>) -> Result<T, Failure> {
    r.map_err(|source| Failure::from(StageError { stage: name, source }))
}

fn main() -> ExitCode {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("stage failure: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Check) => ExitCode::from(4),
    }
}

fn load_config(cli: &Cli, env: Option<&str>) -> Result<PipelineConfig, Failure> {
    let env: Option<EnvId> = env.map(str::parse).transpose().map_err(|e: Error| Failure::Config(e.to_string()))?;
    let mut cfg = match &cli.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            PipelineConfig::from_toml(&text).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => PipelineConfig::for_env(env.unwrap_or(EnvId::Gambling)),
    };
    if let Some(env) = env {
        if env != cfg.run.env {
            return Err(Failure::Config(format!("--env {env} disagrees with config env {}", cfg.run.env)));
        }
    }
    if let Some(seed) = cli.seed {
        cfg.run.seeds = vec![seed];
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn out_path(
    cli: &Cli,
    cfg: &PipelineConfig,
    given: &Option<PathBuf>,
    stem: &str,
    ext: &str,
) -> Result<PathBuf, Failure> {
    if let Some(p) = given {
        return Ok(p.clone());
    }
    stage("io", std::fs::create_dir_all(&cli.out_dir).map_err(Error::from))?;
    let h = cfg.artifact_hash(cfg.run.seeds[0]);
    Ok(cli.out_dir.join(format!("{}-{stem}-{h}.{ext}", cfg.run.env)))
}

fn load_dataset(name: &'static str, path: &Path, cfg: &PipelineConfig) -> Result<OfflineDataset, Failure> {
    let ds = stage(name, OfflineDataset::load(path))?;
    if ds.env_id != cfg.run.env {
        return Err(Failure::Config(format!("dataset env {} disagrees with config env {}", ds.env_id, cfg.run.env)));
    }
    Ok(ds)
}

fn write_json(name: &'static str, path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from);
    stage(name, text.and_then(|t| std::fs::write(path, t + "\n").map_err(Error::from)))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenData { env, steps, mixture, out } => {
            let mut cfg = load_config(&cli, env.as_deref())?;
            if let Some(n) = steps {
                cfg.data.steps = Some(*n);
            }
            if let Some(m) = mixture {
                PolicyMixture::parse(m).map_err(|e| Failure::Config(e.to_string()))?;
                cfg.data.mixture = Some(m.clone());
            }
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let spec = cfg.collection_spec(cfg.run.seeds[0]).map_err(|e| Failure::Config(e.to_string()))?;
            let ds = stage("gen-data", collect(&spec))?;
            let path = out_path(&cli, &cfg, out, "dataset", "jsonl")?;
            stage("gen-data", ds.save(&path))?;
            println!("{} trajectories, {} steps -> {}", ds.len(), ds.n_steps(), path.display());
        }
        Command::Cluster { data, out, codes } => {
            let cfg = load_config(&cli, None)?;
            let ds = load_dataset("cluster", data, &cfg)?;
            let seed = cfg.run.seeds[0];
            let n_actions = stage("cluster", cfg.factory())?.n_actions();
            let (models, telemetry) = stage("cluster", cluster_stage(&cfg, &ds, n_actions, seed))?;
            let ck = out_path(&cli, &cfg, out, "esper", "ckpt")?;
            stage("cluster", save_models(&ck, cfg.run.env, &models))?;
            let codes_path = out_path(&cli, &cfg, codes, "codes", "json")?;
            stage("cluster", save_codes(&codes_path, &assign_all(&models, &ds, stage_seed(seed, Stage::Codes))))?;
            for t in &telemetry {
                println!(
                    "epoch {} l_theta {:.4} l_phi {:.4} action_ce {:.4}",
                    t.epoch, t.l_theta, t.l_phi, t.action_ce
                );
            }
            println!("models -> {}\ncodes -> {}", ck.display(), codes_path.display());
        }
        Command::Label { data, models, out, hist } => {
            let cfg = load_config(&cli, None)?;
            let ds = load_dataset("label", data, &cfg)?;
            let (meta, mut m) = stage("label", load_models(models))?;
            if meta.env != cfg.run.env {
                return Err(Failure::Config(format!(
                    "models env {} disagrees with config env {}",
                    meta.env, cfg.run.env
                )));
            }
            let labeled = stage("label", label_stage(&mut m, &ds, cfg.run.seeds[0]))?;
            let path = out_path(&cli, &cfg, out, "labels", "jsonl")?;
            stage("label", write_records(&path, &labeled, &ds))?;
            let hist_path = out_path(&cli, &cfg, hist, "labels-hist", "json")?;
            write_json("label", &hist_path, &labeled.histogram(20))?;
            println!("labels -> {}\nhistogram -> {}", path.display(), hist_path.display());
        }
        Command::Train { mode, labels, data, steps, out } => {
            let mut cfg = load_config(&cli, None)?;
            if let Some(n) = steps {
                cfg.policy.steps = *n;
            }
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let (states, actions, conds) = training_samples(*mode, labels.as_deref(), data.as_deref(), &cfg)?;
            let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
            let n_actions = stage("train", cfg.factory())?.n_actions();
            let mut rng = Rng::new(stage_seed(cfg.run.seeds[0], Stage::Policy));
            let policy = stage("train", train_policy_flat(&refs, &actions, &conds, n_actions, &cfg.policy, &mut rng))?;
            let path = out_path(&cli, &cfg, out, &format!("policy-{}", mode.as_str()), "ckpt")?;
            stage("train", save_policy(&path, cfg.run.env, *mode, &cfg.policy, &policy))?;
            println!("policy -> {}", path.display());
        }
        Command::Eval { policy, labels, data, targets, episodes } => {
            let cfg = load_config(&cli, None)?;
            let (meta, pol) = stage("eval", load_policy(policy))?;
            if meta.env != cfg.run.env {
                return Err(Failure::Config(format!(
                    "policy env {} disagrees with config env {}",
                    meta.env, cfg.run.env
                )));
            }
            let (_, _, conds) = training_samples(meta.mode, labels.as_deref(), data.as_deref(), &cfg)?;
            let mut spec = cfg.sweep_spec(cfg.run.seeds[0]);
            if let Some(t) = targets {
                spec.targets = parse_targets(t)?;
            }
            if let Some(n) = episodes {
                spec.episodes_per_target = *n;
            }
            let factory = stage("eval", cfg.factory())?;
            let mut report = stage("eval", evaluate_sweep(&pol, &factory, &spec, meta.mode, &conds))?;
            if let Some(d) = data {
                report.dataset_hash = stage("eval", dataset_hash(&load_dataset("eval", d, &cfg)?))?;
            }
            let stem = format!("eval-{}", meta.mode.as_str());
            let json = out_path(&cli, &cfg, &None, &stem, "json")?;
            write_json("eval", &json, &report)?;
            let csv = out_path(&cli, &cfg, &None, &stem, "csv")?;
            stage("eval", std::fs::write(&csv, report_csv(&[&report])).map_err(Error::from))?;
            print!("{}", report_csv(&[&report]));
            println!("alignment_mae {:?} max_performance {}", report.alignment_mae, report.max_performance);
        }
        Command::Scaling { fractions } => {
            let cfg = load_config(&cli, None)?;
            let rows = data_scaling_study(&cfg, fractions).map_err(|e| match e {
                Error::Config(m) => Failure::Config(m),
                e => Failure::Stage(StageError { stage: "scaling", source: e }),
            })?;
            let mut csv = String::from("method,fraction,seed,alignment_mae,max_performance\n");
            for r in &rows {
                let mae = r.alignment_mae.map(|v| v.to_string()).unwrap_or_default();
                csv.push_str(&format!("{},{},{},{},{}\n", r.method, r.fraction, r.seed, mae, r.max_performance));
            }
            let path = out_path(&cli, &cfg, &None, "scaling", "csv")?;
            stage("scaling", std::fs::write(&path, &csv).map_err(Error::from))?;
            print!("{csv}");
        }
        Command::Run { check } => {
            let cfg = load_config(&cli, None)?;
            let (artifacts, results) = run_pipeline(&cfg, &cli.out_dir)?;
            for f in &artifacts.files {
                println!("{}", f.display());
            }
            if *check {
                let lines = acceptance_checks(cfg.run.env, &results);
                for l in &lines {
                    println!("{} {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
                }
                if lines.iter().any(|l| !l.pass) {
                    return Err(Failure::Check);
                }
            }
        }
        Command::Oracle => {
            let out = serde_json::json!({
                "gambling": gambling_oracle(),
                "independence_return": theorem_check(Statistic::Return),
                "independence_first_action": theorem_check(Statistic::FirstAction),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("oracle serializes"));
        }
    }
    Ok(())
}

fn write_records(path: &Path, labeled: &ReturnLabeledDataset, ds: &OfflineDataset) -> esper_core::error::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    labeled.write_records(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

type Samples = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>);

fn training_samples(
    mode: ConditioningMode,
    labels: Option<&Path>,
    data: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<Samples, Failure> {
    match mode {
        ConditioningMode::EsperLabel => {
            let path = labels.ok_or_else(|| Failure::Config("esper mode needs --labels".into()))?;
            let recs = stage("train", read_label_records(path))?;
            let mut out = (Vec::new(), Vec::new(), Vec::new());
            for r in recs {
                out.0.push(r.state);
                out.1.push(r.action);
                out.2.push(r.r_hat);
            }
            Ok(out)
        }
        ConditioningMode::ReturnToGo => {
            let path = data.ok_or_else(|| Failure::Config("rtg mode needs --data".into()))?;
            let ds = load_dataset("train", path, cfg)?;
            let conds: Vec<f64> = return_to_go_conditions(&ds).into_iter().flatten().collect();
            let states = ds.trajectories.iter().flat_map(|t| t.states[..t.len()].iter().cloned()).collect();
            let actions = ds.trajectories.iter().flat_map(|t| t.actions.iter().copied()).collect();
            Ok((states, actions, conds))
        }
    }
}

fn parse_targets(text: &str) -> Result<Targets, Failure> {
    if text == "auto" {
        return Ok(Targets::Auto("auto".into()));
    }
    let values: Result<Vec<f64>, _> = text.split(',').map(|v| v.trim().parse::<f64>()).collect();
    match values {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(Targets::List(v)),
        _ => Err(Failure::Config(format!("bad --targets `{text}`"))),
    }
}
