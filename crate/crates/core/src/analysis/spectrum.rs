//! Success-count spectra: the distribution of per-group success counts a
//! policy induces on a curriculum.
//!
//! The mix weight reacts to `N`, the number of strict successes in a group,
//! so the interesting question for an estimator study is where a policy's
//! groups actually land between `N = 0` and `N = G`. This module samples
//! many independent groups per task and histograms `N`, per task and pooled,
//! flagging the task whose groups scatter the most — the one sitting in the
//! maximal-uncertainty region near `N = G/2`.

use crate::analysis::AnalysisError;
use crate::policy_env::{sample_group, CurriculumError, TabularPolicy, TaskInstance};
use crate::rewards::{score_group, RewardConfig};
use crate::rng::derive_seed2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Success-count histogram of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpectrum {
    pub prompt_id: u64,
    /// `hist[n]` counts sampled groups with exactly `n` successes;
    /// length `group_size + 1`.
    pub hist: Vec<u64>,
    /// Mean success count over the sampled groups.
    pub mean_n: f64,
    /// Population variance of the success count over the sampled groups.
    pub var_n: f64,
}

/// Per-task and pooled success-count spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub group_size: usize,
    /// Groups sampled per task.
    pub n_groups: usize,
    pub per_task: Vec<TaskSpectrum>,
    /// Histogram summed across all tasks.
    pub pooled: Vec<u64>,
    /// Prompt whose success count varies the most — the task closest to the
    /// maximal-uncertainty region where the mix weight bottoms out. First
    /// such prompt on exact variance ties.
    pub max_variance_prompt: u64,
}

fn histogram_moments(hist: &[u64]) -> (f64, f64) {
    let total: u64 = hist.iter().sum();
    let totalf = total as f64;
    let mean = hist
        .iter()
        .enumerate()
        .map(|(n, &c)| n as f64 * c as f64)
        .sum::<f64>()
        / totalf;
    let var = hist
        .iter()
        .enumerate()
        .map(|(n, &c)| (n as f64 - mean).powi(2) * c as f64)
        .sum::<f64>()
        / totalf;
    (mean, var)
}

/// Sample `n_groups` independent groups per task and histogram the success
/// counts.
///
/// Deterministic in `seed`: group `j` of task `i` is drawn from the seed
/// `derive_seed2(seed, i, j)` regardless of thread count or task order.
///
/// # Edge cases
/// - `n_groups < 100` is rejected: smaller samples make the variance ranking
///   noise;
/// - an empty curriculum is rejected;
/// - `group_size < 2` surfaces as the sampler's invalid-group error.
pub fn certainty_spectrum(
    policy: &TabularPolicy,
    curriculum: &[TaskInstance],
    group_size: usize,
    n_groups: usize,
    seed: u64,
    reward: &RewardConfig,
) -> Result<SpectrumReport, AnalysisError> {
    if curriculum.is_empty() {
        return Err(AnalysisError::Curriculum(CurriculumError::Empty(0)));
    }
    if n_groups < 100 {
        return Err(AnalysisError::InvalidConfig(format!(
            "n_groups = {n_groups} is too small for a stable spectrum (need at least 100)"
        )));
    }
    let vocab = policy.layout().vocab;
    let per_task: Vec<TaskSpectrum> = curriculum
        .iter()
        .enumerate()
        .map(|(task_idx, task)| -> Result<TaskSpectrum, AnalysisError> {
            let counts: Vec<usize> = (0..n_groups)
                .into_par_iter()
                .map(|group_idx| -> Result<usize, AnalysisError> {
                    let group_seed = derive_seed2(seed, task_idx as u64, group_idx as u64);
                    let mut group = sample_group(policy, task, group_size, group_seed)?;
                    score_group(&mut group, reward, &vocab)?;
                    Ok(group.trajectories.iter().filter(|t| t.success).count())
                })
                .collect::<Result<_, _>>()?;
            let mut hist = vec![0u64; group_size + 1];
            for n in counts {
                hist[n] += 1;
            }
            let (mean_n, var_n) = histogram_moments(&hist);
            Ok(TaskSpectrum {
                prompt_id: task.prompt_id,
                hist,
                mean_n,
                var_n,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut pooled = vec![0u64; group_size + 1];
    for spectrum in &per_task {
        for (slot, count) in pooled.iter_mut().zip(&spectrum.hist) {
            *slot += count;
        }
    }
    let mut best = &per_task[0];
    for candidate in &per_task[1..] {
        if candidate.var_n > best.var_n {
            best = candidate;
        }
    }
    let max_variance_prompt = best.prompt_id;
    Ok(SpectrumReport {
        group_size,
        n_groups,
        per_task,
        pooled,
        max_variance_prompt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_env::{PolicyConfig, PolicyInit, PolicyLayout};

    fn scaffold(n_answers: usize) -> (TabularPolicy, PolicyLayout) {
        let cfg = PolicyConfig {
            n_think_tokens: 1,
            n_answer_tokens: n_answers,
            n_prompt_symbols: 1,
            context_order: 1,
            max_len: 6,
            init: PolicyInit::FormatScaffold,
        };
        (cfg.build().expect("valid layout"), cfg.layout())
    }

    /// Task with `k` reward-equivalent answers out of the layout's `m`.
    fn task_with_k_answers(layout: &PolicyLayout, prompt_id: u64, k: usize) -> TaskInstance {
        let correct_answers: Vec<_> = (0..k).map(|a| layout.vocab.answer(a)).collect();
        TaskInstance {
            prompt_id,
            prompt: vec![0],
            ground_truth: correct_answers[0],
            correct_answers,
            difficulty: 1.0 - k as f64 / layout.vocab.n_answers as f64,
        }
    }

    #[test]
    fn deterministic_task_piles_all_mass_at_full_success() {
        // One answer token, and it is correct: every rollout scores 1.0.
        let (policy, layout) = scaffold(1);
        let tasks = vec![task_with_k_answers(&layout, 0, 1)];
        let report =
            certainty_spectrum(&policy, &tasks, 4, 100, 9, &RewardConfig::default()).unwrap();
        assert_eq!(report.per_task.len(), 1);
        let spectrum = &report.per_task[0];
        assert_eq!(spectrum.hist, vec![0, 0, 0, 0, 100]);
        assert_eq!(spectrum.mean_n, 4.0);
        assert_eq!(spectrum.var_n, 0.0);
        assert_eq!(report.pooled, spectrum.hist);
        assert_eq!(report.max_variance_prompt, 0);
    }

    // Expected moments below are the binomial values G·p and G·p·(1-p) for
    // the per-trajectory success probability p = k/m forced by the scaffold
    // (format always passes; the answer slot is uniform over m answers).

    #[test]
    fn uniform_answer_choice_matches_binomial_moments() {
        let (policy, layout) = scaffold(2);
        let tasks = vec![task_with_k_answers(&layout, 7, 1)];
        let report =
            certainty_spectrum(&policy, &tasks, 8, 10_000, 31, &RewardConfig::default()).unwrap();
        let spectrum = &report.per_task[0];
        assert_eq!(spectrum.hist.iter().sum::<u64>(), 10_000);
        assert!(
            (spectrum.mean_n - 4.0).abs() < 0.1,
            "mean N = {} outside 4.0 +/- 0.1",
            spectrum.mean_n
        );
        assert!(
            (spectrum.var_n - 2.0).abs() < 0.1,
            "Var(N) = {} outside 2.0 +/- 0.1",
            spectrum.var_n
        );
        assert_eq!(report.max_variance_prompt, 7);
    }

    #[test]
    fn bimodal_curriculum_pools_to_a_bimodal_histogram() {
        // One task at base success 1/4, one at base success 1: the pooled
        // histogram must show a peak near N=2, a peak at N=8, and a valley
        // between them.
        let (policy, layout) = scaffold(4);
        let tasks = vec![
            task_with_k_answers(&layout, 0, 1),
            task_with_k_answers(&layout, 1, 4),
        ];
        let report =
            certainty_spectrum(&policy, &tasks, 8, 500, 11, &RewardConfig::default()).unwrap();
        let pooled = &report.pooled;
        assert_eq!(pooled.iter().sum::<u64>(), 1000);
        assert!(
            pooled[2] > pooled[6] && pooled[8] > pooled[6],
            "expected a valley at N=6: {pooled:?}"
        );
        assert!(
            pooled[8] >= 500,
            "the certain task alone fills N=8: {pooled:?}"
        );
        // The uncertain task scatters (binomial variance 1.5); the certain
        // one does not.
        assert_eq!(report.max_variance_prompt, 0);
        assert_eq!(report.per_task[1].var_n, 0.0);
    }

    #[test]
    fn identical_inputs_reproduce_the_report() {
        let (policy, layout) = scaffold(3);
        let tasks = vec![
            task_with_k_answers(&layout, 0, 1),
            task_with_k_answers(&layout, 1, 2),
        ];
        let run =
            || certainty_spectrum(&policy, &tasks, 4, 120, 5, &RewardConfig::default()).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn small_samples_and_empty_curricula_are_rejected() {
        let (policy, layout) = scaffold(2);
        let tasks = vec![task_with_k_answers(&layout, 0, 1)];
        let err =
            certainty_spectrum(&policy, &tasks, 4, 99, 5, &RewardConfig::default()).unwrap_err();
        assert!(
            matches!(err, AnalysisError::InvalidConfig(_)),
            "got {err:?}"
        );
        let err =
            certainty_spectrum(&policy, &[], 4, 100, 5, &RewardConfig::default()).unwrap_err();
        assert!(matches!(err, AnalysisError::Curriculum(_)), "got {err:?}");
    }

    #[test]
    fn histograms_conserve_group_counts() {
        let (policy, layout) = scaffold(2);
        let tasks = vec![
            task_with_k_answers(&layout, 0, 1),
            task_with_k_answers(&layout, 1, 2),
            task_with_k_answers(&layout, 2, 1),
        ];
        let report =
            certainty_spectrum(&policy, &tasks, 5, 150, 3, &RewardConfig::default()).unwrap();
        for spectrum in &report.per_task {
            assert_eq!(spectrum.hist.len(), 6);
            assert_eq!(spectrum.hist.iter().sum::<u64>(), 150);
        }
        assert_eq!(report.pooled.iter().sum::<u64>(), 450);
    }
}
