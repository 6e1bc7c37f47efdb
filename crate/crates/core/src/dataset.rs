//! Offline datasets and their JSON Lines file format.
//!
//! Line 1 is a header object, every further line one trajectory. Floats go
//! through serde_json's shortest round-trip formatting (never more than 17
//! significant digits), so a write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{EnvId, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub trajectories: Vec<Trajectory>,
    pub gamma: f64,
    pub seed: u64,
    pub env_id: EnvId,
    pub schema_version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    env_id: EnvId,
    gamma: f64,
    seed: u64,
    n_trajectories: usize,
    n_steps: usize,
}

#[derive(Serialize)]
struct TrajLineRef<'a> {
    states: &'a [Vec<f64>],
    actions: &'a [usize],
    rewards: &'a [f64],
    policy_tag: &'a str,
}

#[derive(Deserialize)]
struct TrajLine {
    states: Vec<Vec<f64>>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    policy_tag: String,
}

impl OfflineDataset {
    pub fn new(env_id: EnvId, gamma: f64, seed: u64, trajectories: Vec<Trajectory>) -> Self {
        Self { trajectories, gamma, seed, env_id, schema_version: SCHEMA_VERSION }
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.states[0].len())
    }

    /// Keeps the first `ceil(fraction * len)` trajectories (at least one).
    pub fn subset(&self, fraction: f64) -> OfflineDataset {
        let n = ((self.len() as f64 * fraction).ceil() as usize).clamp(1, self.len().max(1));
        let mut out = self.clone();
        out.trajectories.truncate(n);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Dataset(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.env_id != self.env_id {
                return Err(Error::Dataset(format!("trajectory {i} belongs to {}", t.env_id)));
            }
            t.validate().map_err(|e| Error::Dataset(format!("trajectory {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            schema_version: self.schema_version,
            env_id: self.env_id,
            gamma: self.gamma,
            seed: self.seed,
            n_trajectories: self.len(),
            n_steps: self.n_steps(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for t in &self.trajectories {
            let line =
                TrajLineRef { states: &t.states, actions: &t.actions, rewards: &t.rewards, policy_tag: &t.policy_tag };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or_else(|| Error::Dataset("missing header line".into()))??;
        let header: Header = serde_json::from_str(&header_line)?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Dataset(format!("unsupported schema version {}", header.schema_version)));
        }
        let mut trajectories = Vec::with_capacity(header.n_trajectories);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let tl: TrajLine = serde_json::from_str(&line)?;
            trajectories.push(Trajectory {
                states: tl.states,
                actions: tl.actions,
                rewards: tl.rewards,
                env_id: header.env_id,
                policy_tag: tl.policy_tag,
            });
        }
        let ds = OfflineDataset {
            trajectories,
            gamma: header.gamma,
            seed: header.seed,
            env_id: header.env_id,
            schema_version: header.schema_version,
        };
        if ds.len() != header.n_trajectories || ds.n_steps() != header.n_steps {
            return Err(Error::Dataset(format!(
                "header declares {} trajectories / {} steps, file holds {} / {}",
                header.n_trajectories,
                header.n_steps,
                ds.len(),
                ds.n_steps()
            )));
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_traj() -> impl Strategy<Value = Trajectory> {
        (1usize..6, 1usize..4).prop_flat_map(|(len, dim)| {
            (
                proptest::collection::vec(
                    proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), dim),
                    len + 1,
                ),
                proptest::collection::vec(0usize..7, len),
                proptest::collection::vec(-1e6f64..1e6, len),
                "[a-z_]{1,8}",
            )
                .prop_map(|(states, actions, rewards, tag)| Trajectory {
                    states,
                    actions,
                    rewards,
                    env_id: EnvId::Connect4,
                    policy_tag: tag,
                })
        })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip_is_bit_exact(trajs in proptest::collection::vec(arb_traj(), 0..5), seed in any::<u64>()) {
            let ds = OfflineDataset::new(EnvId::Connect4, 1.0, seed, trajs);
            let mut buf = Vec::new();
            ds.write_jsonl(&mut buf).unwrap();
            let back = OfflineDataset::read_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(back.trajectories.len(), ds.trajectories.len());
            for (a, b) in back.trajectories.iter().zip(&ds.trajectories) {
                for (sa, sb) in a.states.iter().flatten().zip(b.states.iter().flatten()) {
                    prop_assert_eq!(sa.to_bits(), sb.to_bits());
                }
                for (ra, rb) in a.rewards.iter().zip(&b.rewards) {
                    prop_assert_eq!(ra.to_bits(), rb.to_bits());
                }
            }
            prop_assert_eq!(back, ds);
        }
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let mut t = Trajectory::new(EnvId::Gambling, "random", vec![0.0]);
        t.push(2, 1.0, vec![0.1]);
        let ds = OfflineDataset::new(EnvId::Gambling, 1.0, 3, vec![t]);
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"n_steps\":1", "\"n_steps\":2");
        assert!(OfflineDataset::read_jsonl(text.as_bytes()).is_err());
    }
}
