//! Core group-level data types.
//!
//! A *group* is the set of `G` rollouts sampled for one prompt. Every
//! advantage estimator consumes the same per-group summary ([`GroupStats`]),
//! so the statistics are computed once and passed around by reference. All
//! quantities are `f64`; reward values live in `[0, 1]` and a rollout counts
//! as a *success* only when its combined reward is exactly `1.0`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Token identifier within the generation vocabulary.
pub type TokenId = usize;

/// Errors raised by group construction and statistics.
#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    /// Group statistics are undefined for fewer than two rollouts.
    #[error("group needs at least 2 rollouts, got {0}")]
    TooSmall(usize),
    /// Rewards must be bounded verifier outputs.
    #[error("reward {value} at index {index} is outside [0, 1]")]
    RewardOutOfRange { index: usize, value: f64 },
    /// Component rows must match the reward vector length.
    #[error("got {components} component rows for {rewards} rewards")]
    ComponentLengthMismatch { components: usize, rewards: usize },
}

/// The advantage estimators the laboratory knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    /// Group z-score: `(r - mean) / std`.
    #[serde(rename = "grpo")]
    Grpo,
    /// Mean-shift only, no scale: `r - mean`.
    #[serde(rename = "dr-grpo")]
    DrGrpo,
    /// Scaled mean-shift: `alpha * (r - mean)`.
    #[serde(rename = "gpg")]
    Gpg,
    /// Bernoulli-variance scale: `(r - mean) / (mean * (1 - mean))`.
    #[serde(rename = "tree-rpo")]
    TreeRpo,
    /// Advantage percent deviation: `(r - mean) / mean`.
    #[serde(rename = "apd")]
    Apd,
    /// Certainty-weighted mix of the z-score and percent-deviation forms.
    #[serde(rename = "mapo")]
    Mapo,
}

impl EstimatorKind {
    /// All kinds, in the order used by comparison tables.
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Grpo,
        EstimatorKind::DrGrpo,
        EstimatorKind::Gpg,
        EstimatorKind::TreeRpo,
        EstimatorKind::Apd,
        EstimatorKind::Mapo,
    ];

    /// Canonical name, identical to the config-file spelling.
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Grpo => "grpo",
            EstimatorKind::DrGrpo => "dr-grpo",
            EstimatorKind::Gpg => "gpg",
            EstimatorKind::TreeRpo => "tree-rpo",
            EstimatorKind::Apd => "apd",
            EstimatorKind::Mapo => "mapo",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EstimatorKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown estimator kind {s:?}; expected one of grpo, dr-grpo, gpg, tree-rpo, apd, mapo"
                )
            })
    }
}

/// Binary format/accuracy scores for one rollout, kept alongside the
/// combined value so the combination can be audited later.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub format: f64,
    pub accuracy: f64,
}

/// Validated per-group reward vector.
///
/// Length is the group size `G >= 2` and every value lies in `[0, 1]`.
/// When the rewards came from the format/accuracy channels the raw
/// components ride along for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    values: Vec<f64>,
    components: Option<Vec<RewardComponents>>,
}

impl RewardVector {
    /// Build from bare reward values, validating range and group size.
    pub fn from_values(values: Vec<f64>) -> Result<Self, GroupError> {
        Self::from_parts(values, None)
    }

    /// Build from values plus their format/accuracy components.
    ///
    /// The caller is responsible for `values[i]` actually being the
    /// configured combination of `components[i]`; [`crate::rewards`] is the
    /// one producer and guarantees it by construction.
    pub fn from_parts(
        values: Vec<f64>,
        components: Option<Vec<RewardComponents>>,
    ) -> Result<Self, GroupError> {
        if values.len() < 2 {
            return Err(GroupError::TooSmall(values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            // NaN fails this containment test too, which is intended.
            if !(0.0..=1.0).contains(&value) {
                return Err(GroupError::RewardOutOfRange { index, value });
            }
        }
        if let Some(comps) = &components {
            if comps.len() != values.len() {
                return Err(GroupError::ComponentLengthMismatch {
                    components: comps.len(),
                    rewards: values.len(),
                });
            }
        }
        Ok(Self { values, components })
    }

    /// Group size `G`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn components(&self) -> Option<&[RewardComponents]> {
        self.components.as_deref()
    }

    /// Group statistics for this vector (infallible: size and range were
    /// validated at construction).
    pub fn stats(&self) -> GroupStats {
        group_stats(&self.values).expect("validated at construction")
    }
}

/// Per-group summary statistics shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    /// Group mean reward.
    pub mean: f64,
    /// Population standard deviation (divide by `G`, not `G - 1`: the group
    /// is the whole population being normalized, not a sample from one).
    pub std: f64,
    /// Number of successes `N`, counting entries exactly equal to `1.0`.
    pub success_count: usize,
    /// Trajectory certainty `p = N / G`.
    pub certainty: f64,
    /// Mix weight `lambda(p) = 1 - 4 p (1 - p)`, clamped to `[0, 1]`.
    ///
    /// Zero exactly at `p = 1/2` (maximal uncertainty), one at the
    /// deterministic endpoints `p = 0` and `p = 1`.
    pub mix_weight: f64,
}

/// Compute [`GroupStats`] for a reward slice.
///
/// # Edge cases
/// - fewer than two rewards: invalid-group error (statistics undefined);
/// - out-of-range or non-finite rewards: range error;
/// - success counting uses exact equality with `1.0`, tolerance zero — the
///   reward combination is constructed so a fully correct rollout lands on
///   `1.0` exactly.
pub fn group_stats(rewards: &[f64]) -> Result<GroupStats, GroupError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GroupError::TooSmall(g));
    }
    for (index, &value) in rewards.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(GroupError::RewardOutOfRange { index, value });
        }
    }
    let gf = g as f64;
    let mean = rewards.iter().sum::<f64>() / gf;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / gf;
    let std = var.sqrt();
    let success_count = rewards.iter().filter(|&&r| r == 1.0).count();
    let certainty = success_count as f64 / gf;
    // Clamp guards the one-ulp excursions of 4p(1-p) near its extremes.
    let mix_weight = (1.0 - 4.0 * certainty * (1.0 - certainty)).clamp(0.0, 1.0);
    Ok(GroupStats {
        mean,
        std,
        success_count,
        certainty,
        mix_weight,
    })
}

/// Advantage values for one group, tagged with the estimator that made them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub estimator: EstimatorKind,
}

impl AdvantageVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Every guarded estimator produces finite values; this is the audit.
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// One sampled rollout with everything the objective needs to re-evaluate it.
///
/// The three log-probability tracks are per token and always the same length
/// as `tokens`. `logp_old` is fixed at sampling time (the behavior policy);
/// `logp_new` mirrors it at sampling and is refreshed when a different
/// policy re-evaluates the trajectory; `logp_ref` is under the frozen
/// reference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_id: u64,
    pub tokens: Vec<TokenId>,
    pub logp_old: Vec<f64>,
    pub logp_new: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub reward: f64,
    /// True iff `reward == 1.0` (strict success indicator).
    pub success: bool,
}

impl Trajectory {
    /// Check the structural invariants (track lengths, success flag).
    pub fn validate(&self) -> Result<(), String> {
        let t = self.tokens.len();
        if self.logp_old.len() != t || self.logp_new.len() != t || self.logp_ref.len() != t {
            return Err(format!(
                "log-probability tracks must match token count {t} (got old={}, new={}, ref={})",
                self.logp_old.len(),
                self.logp_new.len(),
                self.logp_ref.len()
            ));
        }
        if self.success != (self.reward == 1.0) {
            return Err(format!(
                "success flag {} inconsistent with reward {}",
                self.success, self.reward
            ));
        }
        Ok(())
    }
}
