//! Return arithmetic.

use crate::trajectory::Trajectory;

/// `sum_t gamma^t r_t`; zero for an empty reward sequence.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    discounted_sum(&traj.rewards, gamma)
}

pub fn discounted_sum(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// Element `t` is the discounted return of the suffix starting at `t`.
pub fn suffix_returns(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    suffix_sums(&traj.rewards, gamma)
}

pub fn suffix_sums(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::EnvId;
    use proptest::prelude::*;

    fn traj(rewards: &[f64]) -> Trajectory {
        let mut t = Trajectory::new(EnvId::Gambling, "test", vec![0.0]);
        for &r in rewards {
            t.push(0, r, vec![0.0]);
        }
        t
    }

    #[test]
    fn gambling_safe_action_returns_one() {
        assert_eq!(discounted_return(&traj(&[1.0]), 1.0), 1.0);
    }

    #[test]
    fn zero_rewards_and_empty() {
        assert_eq!(discounted_return(&traj(&[0.0, 0.0, 0.0]), 0.3), 0.0);
        assert_eq!(discounted_return(&traj(&[]), 0.9), 0.0);
        assert!(suffix_returns(&traj(&[]), 0.9).is_empty());
    }

    #[test]
    fn half_discount() {
        assert_eq!(discounted_return(&traj(&[1.0, 1.0]), 0.5), 1.5);
        assert_eq!(suffix_returns(&traj(&[1.0, 1.0]), 0.5), vec![1.5, 1.0]);
    }

    #[test]
    fn terminal_reward_propagates() {
        assert_eq!(suffix_returns(&traj(&[0.0, 0.0, 1.0]), 1.0), vec![1.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn suffix_matches_recurrence(
            rewards in proptest::collection::vec(-10.0f64..10.0, 1..40),
            gamma in 0.0f64..=1.0,
        ) {
            let t = traj(&rewards);
            let suf = suffix_returns(&t, gamma);
            prop_assert!((suf[0] - discounted_return(&t, gamma)).abs() < 1e-9);
            for i in 0..rewards.len() {
                let next = if i + 1 < rewards.len() { suf[i + 1] } else { 0.0 };
                prop_assert!((suf[i] - (rewards[i] + gamma * next)).abs() < 1e-9);
            }
        }
    }
}
