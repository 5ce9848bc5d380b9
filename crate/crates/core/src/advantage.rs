//! Group-relative advantage estimators.
//!
//! All six estimators are affine in the centered reward `r_i - mean`, and
//! differ only in the scale applied to it:
//!
//! | kind    | advantage                                   |
//! |---------|---------------------------------------------|
//! | GRPO    | `(r - mean) / (std + eps)`                  |
//! | DrGRPO  | `r - mean`                                  |
//! | GPG     | `alpha * (r - mean)`                        |
//! | TreeRPO | `(r - mean) / (mean * (1 - mean) + eps)`    |
//! | APD     | `(r - mean) / (mean + eps)`                 |
//! | MAPO    | `(1 - lambda) * GRPO + lambda * APD`        |
//!
//! The mix weight `lambda = 1 - 4 p (1 - p)` comes from the group's success
//! fraction `p`: at maximal uncertainty (`p = 1/2`) MAPO reduces exactly to
//! the z-score, and at the deterministic endpoints (`p` of 0 or 1, binary
//! rewards) it reduces exactly to the percent-deviation form. The z-score
//! normalizes by dispersion alone, which is what makes a lone 0.9 among 1.0s
//! as extreme as a lone 0 among 0.1s; dividing by the mean instead keeps the
//! two mirror batches apart, and the mix buys that separation only when the
//! group is nearly deterministic.

use crate::types::{AdvantageVector, EstimatorKind, GroupStats};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("estimator {0} is not a baseline kind (expected dr-grpo, gpg, or tree-rpo)")]
    NotABaseline(EstimatorKind),
    #[error("estimator spec invalid: {0}")]
    InvalidSpec(String),
}

/// Which estimator to run, plus its scalar knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// GPG scale.
    pub alpha: f64,
    /// Division guard added to every denominator (std, mean, Bernoulli
    /// variance), so zero-dispersion groups yield zero advantages instead
    /// of poisoning the batch with NaN.
    pub eps_div: f64,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Mapo,
            alpha: 0.6,
            eps_div: 1e-8,
        }
    }
}

impl EstimatorSpec {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.eps_div.is_nan() || self.eps_div <= 0.0 {
            return Err(EstimatorError::InvalidSpec(format!(
                "eps_div must be > 0, got {}",
                self.eps_div
            )));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(EstimatorError::InvalidSpec(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Group z-score with a guarded denominator.
///
/// # Edge cases
/// - zero-dispersion groups: centered rewards are 0, so the guarded divide
///   returns exact zeros rather than 0/0.
pub fn advantage_grpo(rewards: &[f64], stats: &GroupStats, eps_div: f64) -> AdvantageVector {
    scaled_centered(
        rewards,
        stats,
        1.0 / (stats.std + eps_div),
        EstimatorKind::Grpo,
    )
}

/// Advantage percent deviation: centered reward relative to the group mean.
pub fn advantage_apd(rewards: &[f64], stats: &GroupStats, eps_div: f64) -> AdvantageVector {
    scaled_centered(
        rewards,
        stats,
        1.0 / (stats.mean + eps_div),
        EstimatorKind::Apd,
    )
}

/// Certainty-weighted mix of the z-score and percent-deviation estimators.
///
/// `lambda` is taken from `stats.mix_weight`; the endpoints are exact:
/// `lambda = 0` returns the GRPO values bit for bit and `lambda = 1` the APD
/// values.
pub fn advantage_mapo(rewards: &[f64], stats: &GroupStats, eps_div: f64) -> AdvantageVector {
    let grpo = advantage_grpo(rewards, stats, eps_div);
    let apd = advantage_apd(rewards, stats, eps_div);
    let lambda = stats.mix_weight;
    let values = grpo
        .values
        .iter()
        .zip(&apd.values)
        .map(|(g, a)| (1.0 - lambda) * g + lambda * a)
        .collect();
    AdvantageVector {
        values,
        estimator: EstimatorKind::Mapo,
    }
}

/// The non-mixed baselines: DrGRPO, GPG, TreeRPO.
///
/// # Edge cases
/// - any other kind is a configuration error, not a silent fallback.
pub fn advantage_baseline(
    rewards: &[f64],
    stats: &GroupStats,
    spec: &EstimatorSpec,
) -> Result<AdvantageVector, EstimatorError> {
    let scale = match spec.kind {
        EstimatorKind::DrGrpo => 1.0,
        EstimatorKind::Gpg => spec.alpha,
        EstimatorKind::TreeRpo => 1.0 / (stats.mean * (1.0 - stats.mean) + spec.eps_div),
        other => return Err(EstimatorError::NotABaseline(other)),
    };
    Ok(scaled_centered(rewards, stats, scale, spec.kind))
}

/// Dispatch on the configured kind; every kind is valid here.
pub fn estimate(rewards: &[f64], stats: &GroupStats, spec: &EstimatorSpec) -> AdvantageVector {
    match spec.kind {
        EstimatorKind::Grpo => advantage_grpo(rewards, stats, spec.eps_div),
        EstimatorKind::Apd => advantage_apd(rewards, stats, spec.eps_div),
        EstimatorKind::Mapo => advantage_mapo(rewards, stats, spec.eps_div),
        EstimatorKind::DrGrpo | EstimatorKind::Gpg | EstimatorKind::TreeRpo => {
            advantage_baseline(rewards, stats, spec).expect("baseline kinds are exhaustive")
        }
    }
}

fn scaled_centered(
    rewards: &[f64],
    stats: &GroupStats,
    scale: f64,
    estimator: EstimatorKind,
) -> AdvantageVector {
    let values: Vec<f64> = rewards.iter().map(|r| (r - stats.mean) * scale).collect();
    debug_assert!(
        values.iter().all(|v| v.is_finite()),
        "{estimator} produced non-finite values"
    );
    AdvantageVector { values, estimator }
}
