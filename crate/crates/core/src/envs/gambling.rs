//! Single-decision gambling MDP with three actions.
//!
//! | action | outcome                     |
//! |--------|-----------------------------|
//! | 0      | +5 or -15, each w.p. 1/2    |
//! | 1      | +1 or -6, each w.p. 1/2     |
//! | 2      | +1 always                   |
//!
//! The start observation is `[0]`. The post-terminal observation carries the
//! realized payout scaled by [`OUTCOME_OBS_SCALE`], so the stochastic
//! outcome is visible to a next-state model.

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const N_ACTIONS: usize = 3;
pub const OBS_DIM: usize = 1;
pub const OUTCOME_OBS_SCALE: f64 = 0.1;

/// (win payout, loss payout, win probability) per action.
pub const PAYOUTS: [(f64, f64, f64); N_ACTIONS] = [(5.0, -15.0, 0.5), (1.0, -6.0, 0.5), (1.0, 1.0, 1.0)];

/// Exact outcome table: `(reward, numerator, denominator)` per action.
pub const EXACT_OUTCOMES: [&[(i64, i64, i64)]; N_ACTIONS] =
    [&[(5, 1, 2), (-15, 1, 2)], &[(1, 1, 2), (-6, 1, 2)], &[(1, 1, 1)]];

pub fn gambling_step(action: usize, rng: &mut Rng) -> Result<(f64, bool)> {
    let &(win, loss, p) =
        PAYOUTS.get(action).ok_or(Error::InvalidAction { action, reason: "gambling has actions 0..3" })?;
    let reward = if p >= 1.0 || rng.uniform() < p { win } else { loss };
    Ok((reward, true))
}

pub fn initial_observation() -> Vec<f64> {
    vec![0.0]
}

pub fn outcome_observation(reward: f64) -> Vec<f64> {
    vec![reward * OUTCOME_OBS_SCALE]
}

#[derive(Clone, Debug, Default)]
pub struct GamblingEnv {
    pub done: bool,
}
