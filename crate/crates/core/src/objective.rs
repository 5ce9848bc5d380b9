//! The clipped, KL-regularized group-relative objective and its exact
//! gradient for the tabular policy.
//!
//! For a batch of rollout groups the objective being **ascended** is
//!
//! ```text
//! J(theta) = (1/B) sum_g (1/G) sum_i mean_t f_eps(x_{i,t}, A_i)
//!            - kl_coef * KL(pi_theta || pi_ref)
//! ```
//!
//! where `x_{i,t} = exp(logp_new - logp_old)` is the per-token probability
//! ratio against the sampling snapshot, `A_i` is the trajectory's advantage
//! broadcast to all of its tokens, `f_eps(x, a) = min(x*a, clip(x, 1-eps,
//! 1+eps)*a)` is the pessimistic clipped term, and the KL is the *exact*
//! categorical divergence averaged over the batch's visited states weighted
//! by visit count. Per-trajectory token means are taken before the group
//! mean (token-mean aggregation), so long and short rollouts carry equal
//! weight.
//!
//! Because the policy is a finite logit table, the gradient is computed in
//! closed form rather than by backprop: clipping acts as a stop-gradient on
//! tokens whose ratio has left the trust region in the direction the
//! advantage is pushing.

use crate::policy_env::{collect_visits, PolicyError, RolloutGroup, StateVisits, TabularPolicy};
use crate::types::AdvantageVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("advantage vector has {got} entries but the group has {expected} trajectories")]
    AdvantageLengthMismatch { expected: usize, got: usize },
    #[error("batch has {groups} groups but {advantages} advantage vectors")]
    BatchLengthMismatch { groups: usize, advantages: usize },
    #[error("trajectory {index} of prompt {prompt_id} has no tokens")]
    EmptyTrajectory { prompt_id: u64, index: usize },
    #[error("policies have different layouts")]
    LayoutMismatch,
    #[error("objective config invalid: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// How per-token terms are folded into a per-trajectory scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Mean over the trajectory's tokens; every rollout contributes equally
    /// to its group regardless of length.
    #[default]
    TokenMean,
}

/// Clipping and regularization knobs for the surrogate objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// Trust-region half-width for the probability ratio. Finite values must
    /// lie in (0, 1); `inf` disables clipping entirely.
    pub clip_eps: f64,
    /// Weight of the KL penalty against the reference policy.
    pub kl_coef: f64,
    pub aggregation: Aggregation,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_coef: 1e-2,
            aggregation: Aggregation::TokenMean,
        }
    }
}

impl ObjectiveConfig {
    /// Preset for gradient-theory checks: no clipping, no KL penalty, so the
    /// gradient is exactly the advantage-weighted policy gradient.
    pub fn theory_preset() -> Self {
        Self {
            clip_eps: f64::INFINITY,
            kl_coef: 0.0,
            aggregation: Aggregation::TokenMean,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let eps_ok = self.clip_eps == f64::INFINITY || (self.clip_eps > 0.0 && self.clip_eps < 1.0);
        if !eps_ok {
            return Err(ObjectiveError::InvalidConfig(format!(
                "clip_eps must lie in (0, 1) or be inf, got {}",
                self.clip_eps
            )));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(ObjectiveError::InvalidConfig(format!(
                "kl_coef must be finite and >= 0, got {}",
                self.kl_coef
            )));
        }
        Ok(())
    }
}

/// The pessimistic clipped term `min(x*a, clip(x, 1-eps, 1+eps)*a)`.
fn clipped_term(ratio: f64, adv: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * adv).min(clipped * adv)
}

/// Whether the gradient flows through this token. The min selects the
/// clipped constant exactly when the ratio has escaped the trust region in
/// the direction the advantage rewards; ties keep the live branch.
fn grad_active(ratio: f64, adv: f64, clip_eps: f64) -> bool {
    !((adv > 0.0 && ratio > 1.0 + clip_eps) || (adv < 0.0 && ratio < 1.0 - clip_eps))
}

/// One trajectory's tokens resolved against a policy: the state each token
/// was emitted from and its log-probability under that policy.
fn walk_trajectory(
    policy: &TabularPolicy,
    prompt: &[usize],
    tokens: &[usize],
) -> Result<Vec<(usize, usize, f64)>, PolicyError> {
    let layout = policy.layout();
    let mut state = layout.start_state(prompt)?;
    let mut steps = Vec::with_capacity(tokens.len());
    for &token in tokens {
        let logp = policy.token_logprob(state, token)?;
        steps.push((state, token, logp));
        state = layout.push_state(state, layout.sym_token(token)?);
    }
    Ok(steps)
}

/// Surrogate part of one group: `(1/G) sum_i mean_t f_eps(x_{i,t}, A_i)`.
fn group_surrogate(
    group: &RolloutGroup,
    adv: &AdvantageVector,
    theta: &TabularPolicy,
    cfg: &ObjectiveConfig,
) -> Result<f64, ObjectiveError> {
    if adv.len() != group.size() {
        return Err(ObjectiveError::AdvantageLengthMismatch {
            expected: group.size(),
            got: adv.len(),
        });
    }
    let g = group.size() as f64;
    let mut total = 0.0;
    for (i, traj) in group.trajectories.iter().enumerate() {
        if traj.tokens.is_empty() {
            return Err(ObjectiveError::EmptyTrajectory {
                prompt_id: traj.prompt_id,
                index: i,
            });
        }
        let steps = walk_trajectory(theta, &group.task.prompt, &traj.tokens)?;
        let a = adv.values[i];
        let mut traj_sum = 0.0;
        for (t, &(_state, _token, logp_new)) in steps.iter().enumerate() {
            let ratio = (logp_new - traj.logp_old[t]).exp();
            traj_sum += clipped_term(ratio, a, cfg.clip_eps);
        }
        match cfg.aggregation {
            Aggregation::TokenMean => total += traj_sum / traj.tokens.len() as f64,
        }
    }
    Ok(total / g)
}

/// Exact categorical KL(theta || reference), averaged over the given states
/// with visit-count weights.
///
/// # Edge cases
/// - empty visit set: returns 0 (no states to diverge on).
/// - identical rows: the mathematically-zero divergence can round to a tiny
///   negative; each per-state term is floored at 0 so the result is never
///   negative.
pub fn kl_divergence(
    theta: &TabularPolicy,
    reference: &TabularPolicy,
    visits: &StateVisits,
) -> Result<f64, ObjectiveError> {
    if theta.layout() != reference.layout() {
        return Err(ObjectiveError::LayoutMismatch);
    }
    let total_visits: u64 = visits.values().sum();
    if total_visits == 0 {
        return Ok(0.0);
    }
    let mut weighted = 0.0;
    for (&state, &count) in visits {
        weighted += count as f64 * state_kl(theta, reference, state);
    }
    Ok(weighted / total_visits as f64)
}

/// KL between one state's distributions, floored at 0.
fn state_kl(theta: &TabularPolicy, reference: &TabularPolicy, state: usize) -> f64 {
    let p = theta.probs_row(state, 1.0);
    let lp = theta.log_softmax_row(state);
    let lq = reference.log_softmax_row(state);
    let kl: f64 = p
        .iter()
        .zip(lp.iter().zip(&lq))
        .map(|(&pi, (&li, &qi))| pi * (li - qi))
        .sum();
    kl.max(0.0)
}

/// Objective value for a whole batch of groups sharing one advantage vector
/// each; the KL penalty is taken over the pooled visited states.
pub fn batch_surrogate_loss(
    groups: &[RolloutGroup],
    advantages: &[AdvantageVector],
    theta: &TabularPolicy,
    cfg: &ObjectiveConfig,
    reference: &TabularPolicy,
) -> Result<f64, ObjectiveError> {
    if groups.len() != advantages.len() {
        return Err(ObjectiveError::BatchLengthMismatch {
            groups: groups.len(),
            advantages: advantages.len(),
        });
    }
    if groups.is_empty() {
        return Ok(0.0);
    }
    // Groups are independent; the sequential index-order sum keeps the
    // result bitwise-stable regardless of thread count.
    let parts: Vec<Result<f64, ObjectiveError>> = groups
        .par_iter()
        .zip(advantages.par_iter())
        .map(|(g, a)| group_surrogate(g, a, theta, cfg))
        .collect();
    let mut surrogate = 0.0;
    for part in parts {
        surrogate += part?;
    }
    surrogate /= groups.len() as f64;
    let kl = if cfg.kl_coef > 0.0 {
        kl_divergence(theta, reference, &collect_visits(groups, theta)?)?
    } else {
        0.0
    };
    Ok(surrogate - cfg.kl_coef * kl)
}

/// Objective value for a single group (batch of one).
pub fn surrogate_loss(
    group: &RolloutGroup,
    adv: &AdvantageVector,
    theta: &TabularPolicy,
    cfg: &ObjectiveConfig,
    reference: &TabularPolicy,
) -> Result<f64, ObjectiveError> {
    batch_surrogate_loss(
        std::slice::from_ref(group),
        std::slice::from_ref(adv),
        theta,
        cfg,
        reference,
    )
}

/// Analytic gradient of [`batch_surrogate_loss`] with respect to every
/// logit, with the same shape as `theta.params()`.
///
/// Per token at state `s` emitting `v` with ratio `x` and advantage `a`, the
/// live-branch contribution to row `s` is `w*a*x * (1[b=v] - pi(b|s))` where
/// `w` folds the batch, group, and token-mean weights; clipped tokens
/// contribute nothing. The KL penalty adds
/// `-kl_coef * w_s * pi(b|s) * ((log pi - log ref)(b|s) - KL_s)` for every
/// visited state.
pub fn batch_exact_gradient(
    groups: &[RolloutGroup],
    advantages: &[AdvantageVector],
    theta: &TabularPolicy,
    cfg: &ObjectiveConfig,
    reference: &TabularPolicy,
) -> Result<Vec<f64>, ObjectiveError> {
    if groups.len() != advantages.len() {
        return Err(ObjectiveError::BatchLengthMismatch {
            groups: groups.len(),
            advantages: advantages.len(),
        });
    }
    let n_params = theta.params().len();
    let mut grad = vec![0.0; n_params];
    if groups.is_empty() {
        return Ok(grad);
    }
    let vocab = theta.layout().vocab.size();
    let batch_w = 1.0 / groups.len() as f64;

    // Surrogate part: per-group contributions computed in parallel, folded
    // in index order for bitwise determinism.
    let parts: Vec<Result<Vec<(usize, f64)>, ObjectiveError>> = groups
        .par_iter()
        .zip(advantages.par_iter())
        .map(|(group, adv)| {
            if adv.len() != group.size() {
                return Err(ObjectiveError::AdvantageLengthMismatch {
                    expected: group.size(),
                    got: adv.len(),
                });
            }
            let mut touches: Vec<(usize, f64)> = Vec::new();
            let group_w = batch_w / group.size() as f64;
            for (i, traj) in group.trajectories.iter().enumerate() {
                if traj.tokens.is_empty() {
                    return Err(ObjectiveError::EmptyTrajectory {
                        prompt_id: traj.prompt_id,
                        index: i,
                    });
                }
                let steps = walk_trajectory(theta, &group.task.prompt, &traj.tokens)?;
                let a = adv.values[i];
                if a == 0.0 {
                    continue;
                }
                let token_w = group_w / traj.tokens.len() as f64;
                for (t, &(state, token, logp_new)) in steps.iter().enumerate() {
                    let ratio = (logp_new - traj.logp_old[t]).exp();
                    if !grad_active(ratio, a, cfg.clip_eps) {
                        continue;
                    }
                    // d/dz(s,b) [x*a] = a*x*(1[b=v] - pi(b|s)) on row s.
                    let coeff = token_w * a * ratio;
                    let probs = theta.probs_row(state, 1.0);
                    let row = state * vocab;
                    touches.push((row + token, coeff));
                    for (b, &pb) in probs.iter().enumerate() {
                        touches.push((row + b, -coeff * pb));
                    }
                }
            }
            Ok(touches)
        })
        .collect();
    for part in parts {
        for (idx, delta) in part? {
            grad[idx] += delta;
        }
    }

    // KL part.
    if cfg.kl_coef > 0.0 {
        let visits = collect_visits(groups, theta)?;
        if theta.layout() != reference.layout() {
            return Err(ObjectiveError::LayoutMismatch);
        }
        let total_visits: u64 = visits.values().sum();
        if total_visits > 0 {
            for (&state, &count) in &visits {
                let w = cfg.kl_coef * count as f64 / total_visits as f64;
                let p = theta.probs_row(state, 1.0);
                let lp = theta.log_softmax_row(state);
                let lq = reference.log_softmax_row(state);
                let kl_s = state_kl(theta, reference, state);
                let row = state * vocab;
                for b in 0..vocab {
                    // d KL_s / d z(s,b) = pi_b * ((lp_b - lq_b) - KL_s);
                    // the penalty enters the objective negatively.
                    grad[row + b] -= w * p[b] * ((lp[b] - lq[b]) - kl_s);
                }
            }
        }
    }
    Ok(grad)
}

/// Analytic gradient for a single group (batch of one).
pub fn exact_gradient(
    group: &RolloutGroup,
    adv: &AdvantageVector,
    theta: &TabularPolicy,
    cfg: &ObjectiveConfig,
    reference: &TabularPolicy,
) -> Result<Vec<f64>, ObjectiveError> {
    batch_exact_gradient(
        std::slice::from_ref(group),
        std::slice::from_ref(adv),
        theta,
        cfg,
        reference,
    )
}

/// Euclidean norm of a gradient table.
pub fn grad_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}
