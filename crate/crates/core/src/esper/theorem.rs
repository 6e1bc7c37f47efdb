//! Exact check, on the gambling MDP, of when conditioning on a trajectory
//! statistic is consistently achievable: transitions must be independent of
//! the statistic given the history.

use num_rational::Rational64;
use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::envs::gambling::{EXACT_OUTCOMES, N_ACTIONS};

/// A trajectory statistic of the one-step game `(action, reward)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Return,
    FirstAction,
}

impl Statistic {
    fn eval(self, action: usize, reward: i64) -> Rational64 {
        match self {
            Statistic::Return => Rational64::from_integer(reward),
            Statistic::FirstAction => Rational64::from_integer(action as i64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoalRow {
    pub z: Rational64,
    pub p_z: Rational64,
    /// `p(a | I = z)` under the data policy.
    pub policy: Vec<Rational64>,
    /// True when `p(r | a, I = z) = p(r | a)` for every action with mass.
    pub transitions_independent: bool,
    /// `E |I(τ) − z|` when acting with `policy` in the true environment.
    pub expected_distance: Rational64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremCheck {
    pub statistic: Statistic,
    pub rows: Vec<GoalRow>,
}

impl TheoremCheck {
    pub fn all_independent(&self) -> bool {
        self.rows.iter().all(|r| r.transitions_independent)
    }

    pub fn all_consistent(&self) -> bool {
        self.rows.iter().all(|r| r.expected_distance.is_zero())
    }
}

fn outcomes(a: usize) -> impl Iterator<Item = (i64, Rational64)> {
    EXACT_OUTCOMES[a].iter().map(|&(r, n, d)| (r, Rational64::new(n, d)))
}

/// Enumerates every goal value reachable under the uniform data policy.
pub fn theorem_check(statistic: Statistic) -> TheoremCheck {
    let pa = Rational64::new(1, N_ACTIONS as i64);
    let mut zs: Vec<Rational64> = Vec::new();
    for a in 0..N_ACTIONS {
        for (r, _) in outcomes(a) {
            let z = statistic.eval(a, r);
            if !zs.contains(&z) {
                zs.push(z);
            }
        }
    }
    zs.sort();
    let rows = zs
        .into_iter()
        .map(|z| {
            let joint: Vec<Rational64> = (0..N_ACTIONS)
                .map(|a| outcomes(a).filter(|&(r, _)| statistic.eval(a, r) == z).map(|(_, p)| pa * p).sum())
                .collect();
            let p_z: Rational64 = joint.iter().copied().sum();
            let policy: Vec<Rational64> = joint.iter().map(|&j| j / p_z).collect();
            let transitions_independent = (0..N_ACTIONS).filter(|&a| !joint[a].is_zero()).all(|a| {
                outcomes(a).all(|(r, p)| {
                    let cond = if statistic.eval(a, r) == z { pa * p / joint[a] } else { Rational64::zero() };
                    cond == p
                })
            });
            let expected_distance = (0..N_ACTIONS)
                .map(|a| policy[a] * outcomes(a).map(|(r, p)| p * (statistic.eval(a, r) - z).abs()).sum::<Rational64>())
                .sum();
            GoalRow { z, p_z, policy, transitions_independent, expected_distance }
        })
        .collect();
    TheoremCheck { statistic, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn return_statistic_breaks_independence() {
        let c = theorem_check(Statistic::Return);
        assert_eq!(c.rows.len(), 4);
        assert!(!c.all_independent());
        let one = c.rows.iter().find(|row| row.z == r(1, 1)).unwrap();
        assert_eq!(one.policy, vec![r(0, 1), r(1, 3), r(2, 3)]);
        // a1 loses half the time: 1/3 * 1/2 * |−6 − 1|.
        assert_eq!(one.expected_distance, r(7, 6));
        assert!(c.rows.iter().any(|row| row.expected_distance > r(0, 1)));
    }

    #[test]
    fn first_action_statistic_is_consistent() {
        let c = theorem_check(Statistic::FirstAction);
        assert_eq!(c.rows.len(), 3);
        assert!(c.all_independent());
        assert!(c.all_consistent());
        for row in &c.rows {
            assert_eq!(row.p_z, r(1, 3));
        }
    }
}
