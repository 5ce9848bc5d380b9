//! The gradient-magnitude law: how much larger or smaller the mixed
//! estimator's policy gradient is than the z-score estimator's, as a
//! function of the group's success fraction.
//!
//! Under binary rewards with success fraction `p`, every MAPO advantage is
//! the corresponding GRPO advantage times a group constant, so at the
//! snapshot point (all ratios 1, clipping and KL off) the two gradients are
//! parallel and their norm ratio has the closed form
//!
//! ```text
//! rho(p) = (1 - lambda(p)) + lambda(p) * sqrt((1 - p) / p)
//! ```
//!
//! `rho > 1` on hard groups (p < 1/2): the mix amplifies gradients exactly
//! where the z-score starves them, and attenuates on easy groups. The
//! empirical probe below measures the ratio from actual rollouts and exact
//! gradients, so it verifies the whole pipeline (sampling, advantage,
//! gradient) against the formula, not just the algebra.

use super::AnalysisError;
use crate::advantage::{advantage_grpo, advantage_mapo, EstimatorSpec};
use crate::objective::{exact_gradient, grad_norm, ObjectiveConfig};
use crate::policy_env::{sample_group, TabularPolicy, TaskInstance};
use crate::rng::derive_seed;
use crate::types::group_stats;
use serde::{Deserialize, Serialize};

/// Mix weight as a function of the success fraction.
pub(crate) fn mix_weight(p: f64) -> f64 {
    1.0 - 4.0 * p * (1.0 - p)
}

/// Closed-form MAPO/GRPO gradient-norm ratio at success fraction `p`.
///
/// # Edge cases
/// - `p` outside the open interval (0, 1) is a domain error: at the
///   endpoints the z-score gradient vanishes and the ratio is undefined.
pub fn rho_closed_form(p: f64) -> Result<f64, AnalysisError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(AnalysisError::OutOfDomain(p));
    }
    let lambda = mix_weight(p);
    Ok((1.0 - lambda) + lambda * ((1.0 - p) / p).sqrt())
}

/// Measure the MAPO/GRPO gradient-norm ratio on real rollouts.
///
/// A group of `group_size` trajectories is sampled from `policy`, assigned
/// binary rewards with exactly `N = round(p_target * group_size)` successes,
/// and both estimators' exact gradients are taken at the snapshot point
/// (clipping and KL disabled). Identical rollouts feed both gradients, so
/// the comparison isolates the advantage transform.
///
/// # Edge cases
/// - `N` of 0 or `group_size` is a degenerate-group error: all-equal rewards
///   zero the z-score gradient and the ratio is undefined.
pub fn empirical_gradient_ratio(
    p_target: f64,
    group_size: usize,
    policy: &TabularPolicy,
    seed: u64,
) -> Result<f64, AnalysisError> {
    let n = (p_target * group_size as f64).round() as usize;
    if n == 0 || n >= group_size {
        return Err(AnalysisError::DegenerateGroup { n, g: group_size });
    }
    let layout = policy.layout();
    let task = TaskInstance {
        prompt_id: 0,
        prompt: vec![0],
        ground_truth: layout.vocab.answer(0),
        correct_answers: vec![layout.vocab.answer(0)],
        difficulty: 0.5,
    };
    let mut group = sample_group(policy, &task, group_size, derive_seed(seed, 0x52415449))?;
    // Assigned binary rewards: the probe controls N exactly instead of
    // relying on the reward rules to hit a target success count.
    for (i, traj) in group.trajectories.iter_mut().enumerate() {
        traj.reward = if i < n { 1.0 } else { 0.0 };
        traj.success = i < n;
    }
    let rewards: Vec<f64> = group.trajectories.iter().map(|t| t.reward).collect();
    let stats = group_stats(&rewards)?;
    let eps = EstimatorSpec::default().eps_div;
    let adv_grpo = advantage_grpo(&rewards, &stats, eps);
    let adv_mapo = advantage_mapo(&rewards, &stats, eps);
    let cfg = ObjectiveConfig::theory_preset();
    let g_grpo = exact_gradient(&group, &adv_grpo, policy, &cfg, policy)?;
    let g_mapo = exact_gradient(&group, &adv_mapo, policy, &cfg, policy)?;
    let denom = grad_norm(&g_grpo);
    if denom == 0.0 {
        return Err(AnalysisError::DegenerateGroup { n, g: group_size });
    }
    Ok(grad_norm(&g_mapo) / denom)
}

/// One grid point of a ratio sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    /// Achieved success fraction N/G.
    pub p: f64,
    pub closed_form: f64,
    pub empirical: f64,
}

/// Closed-form vs measured gradient ratios across the success-fraction grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub group_size: usize,
    pub rows: Vec<RatioRow>,
    /// Largest |closed_form - empirical| over the grid.
    pub max_abs_error: f64,
}

impl RatioReport {
    /// The sign structure of the law: above 1 before the half-way point,
    /// exactly 1 at it, below 1 past it.
    pub fn case_table_holds(&self) -> bool {
        self.rows.iter().all(|row| {
            if row.p < 0.5 {
                row.closed_form > 1.0
            } else if row.p > 0.5 {
                row.closed_form > 0.0 && row.closed_form < 1.0
            } else {
                (row.closed_form - 1.0).abs() <= 1e-12
            }
        })
    }

    /// Monotonicity across the grid: harder groups never get a smaller
    /// amplification than easier ones.
    pub fn non_increasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].closed_form <= w[0].closed_form)
    }
}

/// Evaluate closed-form and empirical ratios on the grid `grid_step,
/// 2*grid_step, …` up to `1 - grid_step`.
///
/// The group size is chosen as `round(1/grid_step)` so every grid point is
/// an achievable success count.
///
/// # Edge cases
/// - `grid_step` outside (0, 0.5] cannot form a grid: config error.
pub fn rho_case_sweep(
    grid_step: f64,
    policy: &TabularPolicy,
    seed: u64,
) -> Result<RatioReport, AnalysisError> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(AnalysisError::InvalidConfig(format!(
            "grid_step must lie in (0, 0.5], got {grid_step}"
        )));
    }
    let group_size = (1.0 / grid_step).round() as usize;
    let points = group_size - 1;
    let mut rows = Vec::with_capacity(points);
    let mut max_abs_error: f64 = 0.0;
    for k in 1..=points {
        let p = k as f64 / group_size as f64;
        let closed_form = rho_closed_form(p)?;
        let empirical =
            empirical_gradient_ratio(p, group_size, policy, derive_seed(seed, k as u64))?;
        max_abs_error = max_abs_error.max((closed_form - empirical).abs());
        rows.push(RatioRow {
            p,
            closed_form,
            empirical,
        });
    }
    Ok(RatioReport {
        group_size,
        rows,
        max_abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_env::{PolicyConfig, PolicyInit};

    fn probe_policy() -> TabularPolicy {
        let cfg = PolicyConfig {
            n_think_tokens: 1,
            n_answer_tokens: 2,
            n_prompt_symbols: 2,
            context_order: 1,
            max_len: 6,
            init: PolicyInit::Uniform,
        };
        TabularPolicy::random(cfg.layout(), 4242, 0.8).unwrap()
    }

    // Expected constants below were frozen from independent evaluation of
    // the closed form in double precision.

    #[test]
    fn closed_form_fixed_points() {
        assert_eq!(rho_closed_form(0.5).unwrap(), 1.0); // lambda(1/2) is exactly 0
        let quarter = rho_closed_form(0.25).unwrap();
        assert!(
            (quarter - 1.1830127018922193).abs() < 1e-12,
            "rho(1/4) = {quarter}"
        );
        let three_quarters = rho_closed_form(0.75).unwrap();
        assert!(
            (three_quarters - 0.8943375672974064).abs() < 1e-12,
            "rho(3/4) = {three_quarters}"
        );
    }

    #[test]
    fn closed_form_rejects_the_endpoints() {
        for p in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(matches!(
                rho_closed_form(p),
                Err(AnalysisError::OutOfDomain(_))
            ));
        }
    }

    #[test]
    fn closed_form_decomposes_through_the_mix_weight() {
        // rho(p) = 1 + lambda(p) * (h(p) - 1) with h = sqrt((1-p)/p): the
        // amplification is entirely driven by the mix weight.
        for k in 1..20 {
            let p = k as f64 / 20.0;
            let h = ((1.0 - p) / p).sqrt();
            let via_lambda = 1.0 + mix_weight(p) * (h - 1.0);
            let direct = rho_closed_form(p).unwrap();
            assert!(
                (via_lambda - direct).abs() < 1e-14,
                "p={p}: {via_lambda} vs {direct}"
            );
        }
    }

    #[test]
    fn empirical_ratio_matches_closed_form_at_quarter_points() {
        let policy = probe_policy();
        for (p, expected) in [
            (0.25, 1.1830127018922193),
            (0.5, 1.0),
            (0.75, 0.8943375672974064),
        ] {
            let measured = empirical_gradient_ratio(p, 8, &policy, 7).unwrap();
            let rel = (measured - expected).abs() / expected;
            assert!(
                rel < 1e-6,
                "p={p}: measured {measured}, closed form {expected}, rel {rel}"
            );
        }
    }

    #[test]
    fn empirical_ratio_rejects_degenerate_counts() {
        let policy = probe_policy();
        assert!(matches!(
            empirical_gradient_ratio(0.0, 8, &policy, 1),
            Err(AnalysisError::DegenerateGroup { n: 0, g: 8 })
        ));
        assert!(matches!(
            empirical_gradient_ratio(1.0, 8, &policy, 1),
            Err(AnalysisError::DegenerateGroup { n: 8, g: 8 })
        ));
    }

    #[test]
    fn sweep_satisfies_the_case_table() {
        let policy = probe_policy();
        let report = rho_case_sweep(0.05, &policy, 11).unwrap();
        assert_eq!(report.group_size, 20);
        assert_eq!(report.rows.len(), 19);
        assert!(
            report.case_table_holds(),
            "sign structure violated: {report:?}"
        );
        assert!(report.non_increasing(), "monotonicity violated: {report:?}");
        assert!(
            report.max_abs_error < 1e-6,
            "empirical drift {} exceeds 1e-6",
            report.max_abs_error
        );
        assert!(report.rows.iter().all(|r| r.closed_form > 0.0));
    }

    #[test]
    fn sweep_rejects_bad_grid_steps() {
        let policy = probe_policy();
        for step in [0.0, -0.05, 0.6, f64::NAN] {
            assert!(matches!(
                rho_case_sweep(step, &policy, 1),
                Err(AnalysisError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let policy = probe_policy();
        let a = rho_case_sweep(0.1, &policy, 13).unwrap();
        let b = rho_case_sweep(0.1, &policy, 13).unwrap();
        assert_eq!(a, b);
    }
}
