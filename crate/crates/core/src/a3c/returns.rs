//! Rollout segments and n-step returns.

use crate::error::{invalid, Result};
use crate::sim::NUM_ACTIONS;
use vrdrive_tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Stacked observation `[1, 12, S, S]`.
    pub obs: Tensor<f32>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub value_est: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutSegment {
    pub transitions: Vec<Transition>,
    /// Critic estimate for the state after the last transition; ignored when
    /// the segment ends an episode.
    pub bootstrap: f64,
}

impl RolloutSegment {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn ends_episode(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.done)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return invalid("empty rollout segment");
        }
        let n = self.len();
        for (i, t) in self.transitions.iter().enumerate() {
            if t.action >= NUM_ACTIONS {
                return invalid(format!("action {} out of range", t.action));
            }
            if t.done && i + 1 != n {
                return invalid(format!("episode end at step {i} of a {n}-step segment"));
            }
            if !t.reward.is_finite() || !t.value_est.is_finite() {
                return invalid(format!("non-finite reward or value at step {i}"));
            }
        }
        Ok(())
    }
}

/// `(returns, advantages)` with `R_t = r_t + discount·R_{t+1}`, seeded by the
/// bootstrap value, or zero if the segment ends the episode.
pub fn n_step_returns(segment: &RolloutSegment, discount: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    segment.validate()?;
    let mut r = if segment.ends_episode() { 0.0 } else { segment.bootstrap };
    let mut returns = vec![0.0; segment.len()];
    for (i, t) in segment.transitions.iter().enumerate().rev() {
        r = t.reward + discount * r;
        returns[i] = r;
    }
    let adv = returns
        .iter()
        .zip(&segment.transitions)
        .map(|(r, t)| r - t.value_est)
        .collect();
    Ok((returns, adv))
}
