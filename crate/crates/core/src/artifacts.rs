//! Files passed between pipeline stages: model and policy checkpoints,
//! code sidecars and label records.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esper::{Code, EsperConfig, EsperModels};
use crate::nn::Checkpoint;
use crate::policy::{CondPolicy, ConditioningMode, PolicyConfig};
use crate::rng::Rng;
use crate::trajectory::EnvId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelsMeta {
    pub kind: String,
    pub env: EnvId,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub config: EsperConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub kind: String,
    pub env: EnvId,
    pub mode: ConditioningMode,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub config: PolicyConfig,
}

fn meta<T: for<'de> Deserialize<'de>>(ck: &Checkpoint, kind: &str) -> Result<T> {
    let v: serde_json::Value = serde_json::from_str(&ck.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if v.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint")));
    }
    serde_json::from_value(v).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_models(path: &Path, env: EnvId, models: &EsperModels) -> Result<()> {
    let m = ModelsMeta {
        kind: "esper-models".into(),
        env,
        obs_dim: models.obs_dim,
        n_actions: models.n_actions,
        config: models.config.clone(),
    };
    Checkpoint::new(serde_json::to_string(&m)?, models.state()).save(path)
}

pub fn load_models(path: &Path) -> Result<(ModelsMeta, EsperModels)> {
    let ck = Checkpoint::load(path)?;
    let m: ModelsMeta = meta(&ck, "esper-models")?;
    let mut models = EsperModels::new(m.obs_dim, m.n_actions, m.config.clone(), &mut Rng::new(0))?;
    models.load_state(&ck.map())?;
    Ok((m, models))
}

pub fn save_policy(
    path: &Path,
    env: EnvId,
    mode: ConditioningMode,
    config: &PolicyConfig,
    policy: &CondPolicy,
) -> Result<()> {
    let m = PolicyMeta {
        kind: "policy".into(),
        env,
        mode,
        obs_dim: policy.obs_dim,
        n_actions: policy.n_actions,
        config: config.clone(),
    };
    Checkpoint::new(serde_json::to_string(&m)?, policy.state()).save(path)
}

pub fn load_policy(path: &Path) -> Result<(PolicyMeta, CondPolicy)> {
    let ck = Checkpoint::load(path)?;
    let m: PolicyMeta = meta(&ck, "policy")?;
    let mut policy = CondPolicy::new(m.obs_dim, m.n_actions, &m.config, &mut Rng::new(0));
    policy.load_state(&ck.map())?;
    Ok((m, policy))
}

pub fn save_codes(path: &Path, codes: &[Vec<Code>]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(codes)?)?;
    Ok(())
}

pub fn load_codes(path: &Path) -> Result<Vec<Vec<Code>>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// One `{state, action, r_hat}` line of a label file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub state: Vec<f64>,
    pub action: usize,
    pub r_hat: f64,
}

pub fn read_label_records(path: &Path) -> Result<Vec<LabelRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Dataset(format!("label line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
