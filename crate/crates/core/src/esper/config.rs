use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::EnvId;

/// Clustering and labeling hyperparameters. Defaults are the full-size
/// per-environment values; desk-scale runs override sizes and rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsperConfig {
    pub rep_size: usize,
    pub rep_groups: usize,
    pub beta_act: f64,
    pub beta_adv: f64,
    pub cluster_epochs: usize,
    pub label_epochs: usize,
    /// Trajectories per clustering batch; steps per labeling batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub label_learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_size: usize,
    pub lstm_hidden_size: usize,
    pub cluster_hidden_layers: usize,
    pub action_hidden_layers: usize,
    pub transition_hidden_layers: usize,
    pub return_hidden_layers: usize,
    pub gumbel_temperature: f64,
    pub straight_through: bool,
    pub tbptt_window: usize,
    /// Tolerance used when checking labels against raw returns.
    pub label_eps: f64,
}

impl Default for EsperConfig {
    fn default() -> Self {
        Self {
            rep_size: 8,
            rep_groups: 1,
            beta_act: 0.01,
            beta_adv: 1.0,
            cluster_epochs: 5,
            label_epochs: 1,
            batch_size: 100,
            learning_rate: 1e-4,
            label_learning_rate: 1e-4,
            weight_decay: 1e-2,
            hidden_size: 512,
            lstm_hidden_size: 512,
            cluster_hidden_layers: 2,
            action_hidden_layers: 2,
            transition_hidden_layers: 2,
            return_hidden_layers: 2,
            gumbel_temperature: 1.0,
            straight_through: true,
            tbptt_window: 64,
            label_eps: 0.25,
        }
    }
}

impl EsperConfig {
    pub fn for_env(env: EnvId) -> Self {
        let base = Self::default();
        match env {
            EnvId::Gambling => base,
            EnvId::Connect4 => Self { rep_size: 128, rep_groups: 4, beta_act: 0.05, label_epochs: 5, ..base },
            EnvId::G2048 => Self { rep_size: 128, rep_groups: 4, beta_act: 0.02, cluster_epochs: 4, ..base },
        }
    }

    pub fn group_size(&self) -> usize {
        self.rep_size / self.rep_groups
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rep_groups == 0 || self.rep_size == 0 || !self.rep_size.is_multiple_of(self.rep_groups) {
            return bad("rep_size must be a positive multiple of rep_groups");
        }
        if !(self.beta_act >= 0.0 && self.beta_adv >= 0.0) {
            return bad("beta_act and beta_adv must be nonnegative");
        }
        if self.cluster_epochs == 0 || self.label_epochs == 0 {
            return bad("epoch counts must be at least 1");
        }
        if self.batch_size == 0 || self.hidden_size == 0 || self.lstm_hidden_size == 0 {
            return bad("batch and layer sizes must be positive");
        }
        if self.gumbel_temperature.is_nan() || self.gumbel_temperature <= 0.0 {
            return bad("gumbel temperature must be positive");
        }
        if self.tbptt_window == 0 {
            return bad("tbptt_window must be positive");
        }
        Ok(())
    }
}
