//! The two failure modes of pure z-score advantages, reproduced on fixed
//! reward batches and checked against the mixed estimator's fix.
//!
//! Reversion: a nearly-solved group (one 0.9 among 1.0s) has tiny dispersion,
//! so the z-score hands its near-miss a huge penalty — larger than what a
//! genuine failure receives in a half-failed group. Mirror: z-scores depend
//! only on deviations, so a batch of near-failures and a batch of
//! near-successes with the same deviation pattern get identical advantages
//! despite opposite meanings. Mean-relative scaling separates them; the
//! certainty-weighted mix applies that scaling exactly where dispersion
//! collapses.

use crate::advantage::{estimate, EstimatorSpec};
use crate::types::{group_stats, EstimatorKind};
use serde::{Deserialize, Serialize};

/// The four fixed reward batches, labeled by what they depict.
const BATCHES: [(&str, [f64; 4]); 4] = [
    ("almost-solved", [0.9, 1.0, 1.0, 1.0]),
    ("one-bad-rollout", [0.1, 0.9, 1.0, 1.0]),
    ("half-failed", [0.1, 0.1, 1.0, 1.0]),
    ("almost-failed", [0.0, 0.1, 0.1, 0.1]),
];

/// Advantages of one estimator on one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathologyRow {
    pub batch: String,
    pub rewards: Vec<f64>,
    pub estimator: EstimatorKind,
    pub advantages: Vec<f64>,
}

/// The full batch-by-estimator table plus the four verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathologyReport {
    pub rows: Vec<PathologyRow>,
    /// z-score penalizes the almost-solved near-miss harder than the
    /// half-failed group's genuine failures.
    pub reversion_in_zscore: bool,
    /// z-score advantages of the almost-solved and almost-failed batches
    /// coincide elementwise.
    pub mirror_in_zscore: bool,
    /// The mix softens the near-miss penalty below its z-score value while
    /// leaving the maximally-uncertain half-failed batch untouched.
    pub mix_softens_reversion: bool,
    /// Mean-relative and mixed advantages separate the mirrored pair.
    pub mix_breaks_mirror: bool,
}

fn advantages_of(kind: EstimatorKind, rewards: &[f64]) -> Vec<f64> {
    let stats = group_stats(rewards).expect("fixed batches are valid groups");
    let spec = EstimatorSpec {
        kind,
        ..Default::default()
    };
    estimate(rewards, &stats, &spec).values
}

fn min_abs(values: &[f64]) -> f64 {
    values.iter().cloned().fold(f64::INFINITY, f64::min).abs()
}

/// Recompute all four batches under all six estimators and test the two
/// pathologies plus the mixed estimator's fixes.
pub fn pathology_report() -> PathologyReport {
    let mut rows = Vec::with_capacity(BATCHES.len() * EstimatorKind::ALL.len());
    for (label, rewards) in BATCHES {
        for kind in EstimatorKind::ALL {
            rows.push(PathologyRow {
                batch: label.to_string(),
                rewards: rewards.to_vec(),
                estimator: kind,
                advantages: advantages_of(kind, &rewards),
            });
        }
    }
    let find = |batch: &str, kind: EstimatorKind| -> &[f64] {
        rows.iter()
            .find(|r| r.batch == batch && r.estimator == kind)
            .map(|r| r.advantages.as_slice())
            .expect("every (batch, estimator) pair is in the table")
    };

    let grpo_solved = find("almost-solved", EstimatorKind::Grpo);
    let grpo_half = find("half-failed", EstimatorKind::Grpo);
    let grpo_failed = find("almost-failed", EstimatorKind::Grpo);
    let mapo_solved = find("almost-solved", EstimatorKind::Mapo);
    let mapo_half = find("half-failed", EstimatorKind::Mapo);
    let mapo_failed = find("almost-failed", EstimatorKind::Mapo);
    let apd_solved = find("almost-solved", EstimatorKind::Apd);
    let apd_failed = find("almost-failed", EstimatorKind::Apd);

    let reversion_in_zscore = min_abs(grpo_solved) > min_abs(grpo_half);
    let mirror_in_zscore = grpo_solved
        .iter()
        .zip(grpo_failed)
        .all(|(a, b)| (a - b).abs() <= 1e-9);
    // The half-failed batch sits at maximal uncertainty, so the mix must
    // leave it exactly at its z-score value while shrinking the nearly
    // deterministic batch's penalty.
    let mix_softens_reversion = min_abs(mapo_solved) < min_abs(grpo_solved)
        && mapo_half
            .iter()
            .zip(grpo_half)
            .all(|(a, b)| (a - b).abs() <= 1e-12);
    let deviating_gap = |a: &[f64], b: &[f64]| (min_abs(a) - min_abs(b)).abs();
    let mix_breaks_mirror = deviating_gap(apd_solved, apd_failed) > 0.1
        && deviating_gap(mapo_solved, mapo_failed) > 0.1;

    PathologyReport {
        rows,
        reversion_in_zscore,
        mirror_in_zscore,
        mix_softens_reversion,
        mix_breaks_mirror,
    }
}
