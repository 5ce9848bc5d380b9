//! Group rollout sampling.
//!
//! One group is `G` independent rollouts of the same task from the same
//! behavior policy. Sampling is autoregressive over the full vocabulary at
//! temperature 1, stops at the answer-close token, and is hard-cut at
//! `max_len` (forced end of sequence). Every group is driven by its own
//! seed, so any group from a run can be resampled in isolation.

use super::policy::{policy_logprob, PolicyError, TabularPolicy};
use super::task::TaskInstance;
use super::vocab::ANSWER_CLOSE;
use crate::rng::seeded_rng;
use crate::types::{GroupError, RewardVector, Trajectory};
use std::collections::BTreeMap;

/// State visit counts for a batch of trajectories.
///
/// Ordered map so that any iteration (KL sums, gradient accumulation) is
/// reproducible bit for bit.
pub type StateVisits = BTreeMap<usize, u64>;

/// A task plus the `G` trajectories sampled for it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RolloutGroup {
    pub task: TaskInstance,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutGroup {
    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    /// Collect the (already scored) rewards into a validated vector.
    pub fn reward_vector(&self) -> Result<RewardVector, GroupError> {
        RewardVector::from_values(self.trajectories.iter().map(|t| t.reward).collect())
    }

    /// Refresh `logp_ref` for every trajectory under `reference`.
    ///
    /// `sample_group` seeds the reference track with the behavior policy's
    /// values; call this when the reference differs from the sampler.
    pub fn refresh_ref_logprobs(&mut self, reference: &TabularPolicy) -> Result<(), PolicyError> {
        for traj in &mut self.trajectories {
            traj.logp_ref = policy_logprob(reference, &self.task.prompt, &traj.tokens)?;
        }
        Ok(())
    }
}

/// Sample a group of `group_size` rollouts for `task` from `policy`.
///
/// Rewards are left at zero: scoring belongs to the rewards module. The
/// `logp_old` and `logp_new` tracks are the behavior policy's exact values
/// (they coincide at sampling time); `logp_ref` starts as a copy of
/// `logp_old` and is refreshed by [`RolloutGroup::refresh_ref_logprobs`]
/// when a distinct reference policy is in play.
///
/// # Edge cases
/// - `group_size < 2` is an invalid-group error;
/// - identical `(policy, task, seed)` triples reproduce the group bitwise.
pub fn sample_group(
    policy: &TabularPolicy,
    task: &TaskInstance,
    group_size: usize,
    seed: u64,
) -> Result<RolloutGroup, SampleError> {
    if group_size < 2 {
        return Err(SampleError::Group(GroupError::TooSmall(group_size)));
    }
    let mut rng = seeded_rng(seed);
    let mut trajectories = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        trajectories.push(sample_trajectory(policy, task, 1.0, &mut rng)?);
    }
    Ok(RolloutGroup {
        task: task.clone(),
        trajectories,
    })
}

/// One temperature-controlled rollout for `task` under `policy`.
///
/// Generation stops at the close-answer token or the length cap. The
/// recorded log-probabilities are always the temperature-1 values (the
/// measure the objective optimizes), even when sampling at another
/// temperature, so evaluation rollouts stay comparable to training ones.
pub fn sample_trajectory(
    policy: &TabularPolicy,
    task: &TaskInstance,
    temperature: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Trajectory, PolicyError> {
    let layout = policy.layout();
    let mut state = layout.start_state(&task.prompt)?;
    let mut tokens = Vec::new();
    let mut logp = Vec::new();
    for _ in 0..layout.max_len {
        let token = policy.sample_token(state, temperature, rng)?;
        logp.push(policy.token_logprob(state, token)?);
        tokens.push(token);
        state = layout.push_state(state, layout.sym_token(token)?);
        if token == ANSWER_CLOSE {
            break;
        }
    }
    Ok(Trajectory {
        prompt_id: task.prompt_id,
        logp_old: logp.clone(),
        logp_new: logp.clone(),
        logp_ref: logp,
        tokens,
        reward: 0.0,
        success: false,
    })
}

/// Errors from group sampling.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SampleError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Count the context states visited by every token of every trajectory.
///
/// This is the visit measure the exact KL term is averaged under.
pub fn collect_visits<'a>(
    groups: impl IntoIterator<Item = &'a RolloutGroup>,
    policy: &TabularPolicy,
) -> Result<StateVisits, PolicyError> {
    let layout = policy.layout();
    let mut visits = StateVisits::new();
    for group in groups {
        for traj in &group.trajectories {
            let mut state = layout.start_state(&group.task.prompt)?;
            for &token in &traj.tokens {
                *visits.entry(state).or_insert(0) += 1;
                state = layout.push_state(state, layout.sym_token(token)?);
            }
        }
    }
    Ok(visits)
}
