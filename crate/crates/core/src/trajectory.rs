use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which benchmark a trajectory or dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    #[serde(rename = "gambling")]
    Gambling,
    #[serde(rename = "connect4")]
    Connect4,
    #[serde(rename = "2048")]
    G2048,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Gambling => "gambling",
            EnvId::Connect4 => "connect4",
            EnvId::G2048 => "2048",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "gambling" => Ok(EnvId::Gambling),
            "connect4" => Ok(EnvId::Connect4),
            "2048" => Ok(EnvId::G2048),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

/// An agent-facing observation.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub terminal: bool,
}

/// One episode. `states` holds the post-terminal state too, so
/// `states.len() == actions.len() + 1` and only the last state is terminal.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub env_id: EnvId,
    pub policy_tag: String,
}

impl Trajectory {
    pub fn new(env_id: EnvId, policy_tag: impl Into<String>, initial: Vec<f64>) -> Self {
        Self { states: vec![initial], actions: Vec::new(), rewards: Vec::new(), env_id, policy_tag: policy_tag.into() }
    }

    pub fn push(&mut self, action: usize, reward: f64, next_state: Vec<f64>) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.states.push(next_state);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.states.len() != self.actions.len() + 1 || self.rewards.len() != self.actions.len() {
            return Err(Error::Dataset(format!(
                "inconsistent lengths: {} states, {} actions, {} rewards",
                self.states.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        if let Some(r) = self.rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::Dataset(format!("non-finite reward {r}")));
        }
        let dim = self.states[0].len();
        if self.states.iter().any(|s| s.len() != dim) {
            return Err(Error::Dataset("observation length varies within a trajectory".into()));
        }
        Ok(())
    }
}
