//! The training loop: snapshot the sampling policy, roll out groups, score
//! rewards, estimate advantages, take one gradient-ascent step.
//!
//! Each step performs exactly one update from freshly sampled data, so the
//! objective is always evaluated at the snapshot point (all probability
//! ratios are 1 there and clipping never binds during training itself; the
//! clip machinery matters for off-snapshot evaluation and tests).
//!
//! Determinism contract: a run is a pure function of `(config, curriculum,
//! initial policy)`. Seeds derive hierarchically — run seed → step seed →
//! group seed — so any single group can be resampled in isolation when
//! debugging, and records reproduce bitwise across runs and thread counts.

use crate::advantage::{estimate, EstimatorSpec};
use crate::objective::{
    batch_exact_gradient, grad_norm, kl_divergence, ObjectiveConfig, ObjectiveError,
};
use crate::policy_env::{
    collect_visits, sample_group, sample_trajectory, PolicyError, RolloutGroup, SampleError,
    TabularPolicy, TaskInstance,
};
use crate::rewards::{
    accuracy_reward_any, combined_reward, format_reward, score_group, RewardConfig, RewardError,
};
use crate::rng::{derive_seed, derive_seed2, seeded_rng};
use crate::types::{group_stats, AdvantageVector, GroupError, GroupStats};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seed-stream tags so the step, group, and prompt-pick streams never
/// collide.
const TAG_STEP: u64 = 1;
const TAG_GROUP: u64 = 2;
const TAG_PICK: u64 = 3;
const TAG_EVAL: u64 = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config invalid: {0}")]
    InvalidConfig(String),
    #[error("curriculum is empty")]
    EmptyCurriculum,
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Group(#[from] GroupError),
    /// Numerical failure: a loss, gradient, advantage, or updated parameter
    /// went NaN/Inf. `dump` holds a JSON rendering of the offending batch
    /// slice for post-mortem (non-finite floats appear as null).
    #[error("non-finite {what} at step {step}")]
    NonFinite {
        step: usize,
        what: String,
        dump: String,
    },
}

/// Whether the KL reference policy tracks training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefRefresh {
    /// Reference stays the initial policy for the whole run.
    #[default]
    Never,
    /// Reference is reset to the current policy at the start of every step
    /// (the KL penalty then measures only the single-step move).
    EveryStep,
}

/// Everything one training run needs besides the curriculum and the initial
/// policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of optimization steps E.
    pub steps: usize,
    /// Rollouts per prompt group G.
    pub group_size: usize,
    /// Prompt groups sampled per step.
    pub rollout_batch: usize,
    pub learning_rate: f64,
    pub estimator: EstimatorSpec,
    pub objective: ObjectiveConfig,
    pub reward: RewardConfig,
    pub seed: u64,
    /// Drop zero-dispersion groups from the update (all-equal rewards carry
    /// no ranking signal); they still count in the step's metrics.
    pub drop_zero_std_groups: bool,
    pub ref_refresh: RefRefresh,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            group_size: 8,
            rollout_batch: 8,
            learning_rate: 0.5,
            estimator: EstimatorSpec::default(),
            objective: ObjectiveConfig::default(),
            reward: RewardConfig::default(),
            seed: 0,
            drop_zero_std_groups: false,
            ref_refresh: RefRefresh::Never,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps < 1 {
            return Err(TrainError::InvalidConfig("steps must be >= 1".into()));
        }
        if self.group_size < 2 {
            return Err(TrainError::InvalidConfig(format!(
                "group_size must be >= 2, got {}",
                self.group_size
            )));
        }
        if self.rollout_batch < 1 {
            return Err(TrainError::InvalidConfig(
                "rollout_batch must be >= 1".into(),
            ));
        }
        // Zero is allowed on purpose: a zero-rate run measures metrics
        // without moving the policy.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        self.estimator
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.objective
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.reward
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// Per-step metrics, one CSV row each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    /// Mean reward over every trajectory sampled this step.
    pub mean_reward: f64,
    /// Fraction of trajectories with reward exactly 1.
    pub success_rate: f64,
    /// KL(current policy || reference) over this step's visited states,
    /// measured before the update.
    pub mean_kl: f64,
    /// Euclidean norm of the ascent gradient actually applied.
    pub grad_norm: f64,
    /// hist[n] counts this step's groups with exactly n successes; the
    /// counts sum to rollout_batch.
    pub hist: Vec<u64>,
}

/// Everything a training step exposes to observers: the scored groups, the
/// per-group statistics and advantages that fed the update, and the record.
pub struct StepTrace<'a> {
    pub step: usize,
    pub groups: &'a [RolloutGroup],
    pub stats: &'a [GroupStats],
    pub advantages: &'a [AdvantageVector],
    pub record: &'a TrainRecord,
}

/// A finished run: the trained policy and one record per step.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: TabularPolicy,
    pub records: Vec<TrainRecord>,
}

/// Run the full loop. The initial policy doubles as the KL reference
/// (until/unless `ref_refresh` moves it).
pub fn train(
    cfg: &TrainConfig,
    initial: TabularPolicy,
    curriculum: &[TaskInstance],
) -> Result<TrainOutput, TrainError> {
    train_observed(cfg, initial, curriculum, &mut |_| {})
}

/// [`train`] with a per-step observer for tests and diagnostics. The
/// observer runs after metrics are computed and before the parameter
/// update, so it sees exactly what the update consumed.
pub fn train_observed(
    cfg: &TrainConfig,
    initial: TabularPolicy,
    curriculum: &[TaskInstance],
    observer: &mut dyn FnMut(&StepTrace<'_>),
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if curriculum.is_empty() {
        return Err(TrainError::EmptyCurriculum);
    }
    for task in curriculum {
        task.validate(initial.layout())
            .map_err(|e| TrainError::InvalidConfig(format!("curriculum task invalid: {e}")))?;
    }
    let vocab = initial.layout().vocab;
    let mut policy = initial;
    let mut reference = policy.clone();
    let mut records = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        if cfg.ref_refresh == RefRefresh::EveryStep {
            reference = policy.clone();
        }
        let step_seed = derive_seed2(cfg.seed, TAG_STEP, step as u64);

        // Prompt selection: uniform with replacement from the curriculum,
        // deterministic in the step seed.
        let mut pick_rng = seeded_rng(derive_seed(step_seed, TAG_PICK));
        let picks: Vec<usize> = (0..cfg.rollout_batch)
            .map(|_| pick_rng.random_range(0..curriculum.len()))
            .collect();

        // Sampling + scoring phase: the policy is an immutable snapshot
        // here, so groups are independent and run in parallel; the ordered
        // collect keeps results deterministic across thread counts.
        let sampled: Vec<Result<RolloutGroup, TrainError>> = picks
            .par_iter()
            .enumerate()
            .map(|(slot, &task_idx)| {
                let seed = derive_seed2(step_seed, TAG_GROUP, slot as u64);
                let mut group = sample_group(&policy, &curriculum[task_idx], cfg.group_size, seed)?;
                score_group(&mut group, &cfg.reward, &vocab)?;
                Ok(group)
            })
            .collect();
        let mut groups = Vec::with_capacity(cfg.rollout_batch);
        for g in sampled {
            groups.push(g?);
        }

        // Advantage phase.
        let mut stats = Vec::with_capacity(groups.len());
        let mut advantages = Vec::with_capacity(groups.len());
        for group in &groups {
            let rewards = group.reward_vector()?;
            let st = group_stats(rewards.values())?;
            let adv = estimate(rewards.values(), &st, &cfg.estimator);
            if !adv.all_finite() {
                return Err(non_finite(step, "advantage vector", group));
            }
            stats.push(st);
            advantages.push(adv);
        }

        // Update set: optionally filter out zero-dispersion groups.
        let kept: Vec<usize> = (0..groups.len())
            .filter(|&i| !cfg.drop_zero_std_groups || stats[i].std > 0.0)
            .collect();
        let kept_groups: Vec<RolloutGroup> = kept.iter().map(|&i| groups[i].clone()).collect();
        let kept_advs: Vec<AdvantageVector> = kept.iter().map(|&i| advantages[i].clone()).collect();

        let grad = batch_exact_gradient(
            &kept_groups,
            &kept_advs,
            &policy,
            &cfg.objective,
            &reference,
        )?;
        if grad.iter().any(|g| !g.is_finite()) {
            // Locate a group whose own gradient is already bad; a non-finite
            // batch gradient implies at least one group contributed, so the
            // fallback to the first kept group never misattributes silently.
            let culprit = kept_groups
                .iter()
                .zip(&kept_advs)
                .find_map(|(g, a)| {
                    let bad =
                        crate::objective::exact_gradient(g, a, &policy, &cfg.objective, &reference)
                            .map(|gr| gr.iter().any(|v| !v.is_finite()))
                            .unwrap_or(true);
                    bad.then_some(g)
                })
                .unwrap_or(&kept_groups[0]);
            return Err(non_finite(step, "gradient", culprit));
        }

        // Metrics at the snapshot point, before the update.
        let mean_kl = kl_divergence(&policy, &reference, &collect_visits(&groups, &policy)?)?;
        if !mean_kl.is_finite() {
            return Err(non_finite(step, "KL divergence", &groups[0]));
        }
        let n_traj: usize = groups.iter().map(|g| g.size()).sum();
        let mean_reward = groups
            .iter()
            .flat_map(|g| g.trajectories.iter().map(|t| t.reward))
            .sum::<f64>()
            / n_traj as f64;
        let successes: usize = groups
            .iter()
            .flat_map(|g| g.trajectories.iter())
            .filter(|t| t.success)
            .count();
        let mut hist = vec![0u64; cfg.group_size + 1];
        for st in &stats {
            hist[st.success_count] += 1;
        }
        let record = TrainRecord {
            step,
            mean_reward,
            success_rate: successes as f64 / n_traj as f64,
            mean_kl,
            grad_norm: grad_norm(&grad),
            hist,
        };
        observer(&StepTrace {
            step,
            groups: &groups,
            stats: &stats,
            advantages: &advantages,
            record: &record,
        });
        records.push(record);

        // Ascent step — the single mutation point of the loop.
        for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
            *p += cfg.learning_rate * g;
        }
        if policy.params().iter().any(|p| !p.is_finite()) {
            return Err(non_finite(step, "updated parameters", &groups[0]));
        }
    }
    Ok(TrainOutput { policy, records })
}

fn non_finite(step: usize, what: &str, group: &RolloutGroup) -> TrainError {
    TrainError::NonFinite {
        step,
        what: what.to_string(),
        dump: serde_json::to_string_pretty(group).unwrap_or_else(|e| format!("(dump failed: {e})")),
    }
}

/// Per-task evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub prompt_id: u64,
    pub held_out: bool,
    pub success_rate: f64,
}

/// Accuracy metrics over the train/held-out curriculum splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: Vec<TaskEval>,
    /// Mean success over training-split tasks (None if that split is empty).
    pub in_domain: Option<f64>,
    /// Mean success over held-out tasks (None if that split is empty).
    pub held_out: Option<f64>,
    /// Arithmetic mean of the available split means.
    pub mean_accuracy: f64,
}

/// Monte Carlo evaluation: `samples_per_task` rollouts per task at the given
/// temperature, scored with the strict success rule (reward exactly 1).
pub fn eval_policy(
    policy: &TabularPolicy,
    in_domain_tasks: &[TaskInstance],
    held_out_tasks: &[TaskInstance],
    samples_per_task: usize,
    temperature: f64,
    seed: u64,
    reward: &RewardConfig,
) -> Result<EvalReport, TrainError> {
    if samples_per_task < 1 {
        return Err(TrainError::InvalidConfig(
            "samples_per_task must be >= 1".into(),
        ));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(TrainError::InvalidConfig(format!(
            "temperature must be finite and > 0, got {temperature}"
        )));
    }
    let vocab = policy.layout().vocab;
    let splits = [(false, in_domain_tasks), (true, held_out_tasks)];
    let mut per_task = Vec::new();
    for (held_out, tasks) in splits {
        let rates: Vec<Result<TaskEval, TrainError>> = tasks
            .par_iter()
            .enumerate()
            .map(|(idx, task)| {
                let tag = (held_out as u64) << 32 | idx as u64;
                let mut rng = seeded_rng(derive_seed2(seed, TAG_EVAL, tag));
                let mut successes = 0usize;
                for _ in 0..samples_per_task {
                    let traj = sample_trajectory(policy, task, temperature, &mut rng)?;
                    let format = format_reward(&traj.tokens, &vocab);
                    let accuracy = accuracy_reward_any(&traj.tokens, &task.correct_answers, &vocab);
                    if combined_reward(format, accuracy, reward)? == 1.0 {
                        successes += 1;
                    }
                }
                Ok(TaskEval {
                    prompt_id: task.prompt_id,
                    held_out,
                    success_rate: successes as f64 / samples_per_task as f64,
                })
            })
            .collect();
        for r in rates {
            per_task.push(r?);
        }
    }
    let split_mean = |held_out: bool| {
        let rates: Vec<f64> = per_task
            .iter()
            .filter(|t| t.held_out == held_out)
            .map(|t| t.success_rate)
            .collect();
        if rates.is_empty() {
            None
        } else {
            Some(rates.iter().sum::<f64>() / rates.len() as f64)
        }
    };
    let in_domain = split_mean(false);
    let held_out = split_mean(true);
    let available: Vec<f64> = [in_domain, held_out].into_iter().flatten().collect();
    if available.is_empty() {
        return Err(TrainError::EmptyCurriculum);
    }
    let mean_accuracy = available.iter().sum::<f64>() / available.len() as f64;
    Ok(EvalReport {
        per_task,
        in_domain,
        held_out,
        mean_accuracy,
    })
}
