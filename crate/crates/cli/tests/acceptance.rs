//! Release gate: one test per shipped claim, each asserting the claim at its
//! stated tolerance and printing a `PASS` line with the measured values
//! (visible under `cargo test -- --nocapture`).
//!
//! The criteria cover the two z-score pathologies (reversion and mirror
//! collision), the mixed estimator's endpoint reductions, the closed-form
//! gradient-magnitude law and its case table, analytic-gradient correctness,
//! the binomial success-count spectrum, end-to-end training, and bitwise
//! determinism of the command-line artifacts.

use std::time::{Duration, Instant};

use mapo_core::advantage::{advantage_apd, advantage_grpo, advantage_mapo};
use mapo_core::analysis::{
    certainty_spectrum, empirical_gradient_ratio, rho_case_sweep, rho_closed_form,
};
use mapo_core::objective::{batch_exact_gradient, batch_surrogate_loss, ObjectiveConfig};
use mapo_core::policy_env::{split_curriculum, PolicyConfig, PolicyInit, TaskInstance};
use mapo_core::rewards::score_group;
use mapo_core::rng::{derive_seed, derive_seed2};
use mapo_core::trainer::{train, TrainConfig};
use mapo_core::{
    estimate, group_stats, make_curriculum, sample_group, DifficultyProfile, EstimatorKind,
    EstimatorSpec, RewardConfig, TabularPolicy,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const HIGH: [f64; 4] = [0.9, 1.0, 1.0, 1.0];
const LOW: [f64; 4] = [0.0, 0.1, 0.1, 0.1];

fn eps_div() -> f64 {
    EstimatorSpec::default().eps_div
}

/// Small random-logit policy reused by the gradient criteria.
fn probe_config() -> PolicyConfig {
    PolicyConfig {
        n_think_tokens: 1,
        n_answer_tokens: 2,
        n_prompt_symbols: 2,
        context_order: 1,
        max_len: 6,
        init: PolicyInit::Uniform,
    }
}

#[test]
fn criterion_1_reversion_values() {
    let stats = group_stats(&HIGH).expect("fixed group is valid");
    // Fastest of 100 repeats: the claim is about the computation, not about
    // scheduler noise on the first call.
    let mut best = Duration::MAX;
    let mut adv = Vec::new();
    for _ in 0..100 {
        let t = Instant::now();
        adv = advantage_grpo(&HIGH, &stats, eps_div()).values;
        best = best.min(t.elapsed());
    }
    let min = adv.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(
        (min - -1.73).abs() <= 0.01,
        "z-score min on {HIGH:?} is {min}, want -1.73 +/- 0.01"
    );
    for (i, v) in adv.iter().enumerate().skip(1) {
        assert!(
            (v - 0.577).abs() <= 0.01,
            "z-score entry {i} on {HIGH:?} is {v}, want 0.577 +/- 0.01"
        );
    }
    assert!(
        best < Duration::from_millis(1),
        "advantage of a 4-reward group took {best:?}, want < 1 ms"
    );
    println!(
        "PASS criterion 1 (reversion values): min = {min:.6} (-1.73 +/- 0.01), \
         positives = {:.6} (0.577 +/- 0.01), fastest run {best:?} (< 1 ms)",
        adv[1]
    );
}

#[test]
fn criterion_2_mirror_pair() {
    let stats_low = group_stats(&LOW).expect("fixed group is valid");
    let stats_high = group_stats(&HIGH).expect("fixed group is valid");
    let grpo_low = advantage_grpo(&LOW, &stats_low, eps_div()).values;
    let grpo_high = advantage_grpo(&HIGH, &stats_high, eps_div()).values;
    let mut worst = 0.0f64;
    for (a, b) in grpo_low.iter().zip(&grpo_high) {
        worst = worst.max((a - b).abs());
        assert!(
            (a - b).abs() <= 1e-9,
            "z-score tells the mirrored batches apart: {a} vs {b}"
        );
    }
    // Entry 0 deviates from the rest in both batches; the mean-relative and
    // mixed estimators must give it clearly different magnitudes across the
    // pair.
    let apd_gap = (advantage_apd(&LOW, &stats_low, eps_div()).values[0].abs()
        - advantage_apd(&HIGH, &stats_high, eps_div()).values[0].abs())
    .abs();
    let mapo_gap = (advantage_mapo(&LOW, &stats_low, eps_div()).values[0].abs()
        - advantage_mapo(&HIGH, &stats_high, eps_div()).values[0].abs())
    .abs();
    assert!(
        apd_gap > 0.1,
        "mean-relative deviating-entry gap {apd_gap} <= 0.1"
    );
    assert!(
        mapo_gap > 0.1,
        "mixed deviating-entry gap {mapo_gap} <= 0.1"
    );
    println!(
        "PASS criterion 2 (mirror pair): z-score max |delta| = {worst:.2e} (<= 1e-9), \
         deviating-entry magnitude gaps: mean-relative {apd_gap:.3}, mixed {mapo_gap:.3} (> 0.1)"
    );
}

#[test]
fn criterion_3_endpoint_laws_exhaustive() {
    let mut endpoint_cases = 0usize;
    let mut half_cases = 0usize;
    let mut worst = 0.0f64;
    for g in 2..=8usize {
        for mask in 0u32..(1 << g) {
            let rewards: Vec<f64> = (0..g).map(|i| ((mask >> i) & 1) as f64).collect();
            let n = mask.count_ones() as usize;
            let stats = group_stats(&rewards).expect("binary group is valid");
            let mapo = advantage_mapo(&rewards, &stats, eps_div()).values;
            if n == 0 || n == g {
                let apd = advantage_apd(&rewards, &stats, eps_div()).values;
                for (a, b) in mapo.iter().zip(&apd) {
                    worst = worst.max((a - b).abs());
                    assert!(
                        (a - b).abs() <= 1e-9,
                        "mixed != mean-relative at N in {{0, G}} on {rewards:?}"
                    );
                }
                endpoint_cases += 1;
            }
            if 2 * n == g {
                let grpo = advantage_grpo(&rewards, &stats, eps_div()).values;
                for (a, b) in mapo.iter().zip(&grpo) {
                    worst = worst.max((a - b).abs());
                    assert!(
                        (a - b).abs() <= 1e-9,
                        "mixed != z-score at N = G/2 on {rewards:?}"
                    );
                }
                half_cases += 1;
            }
        }
    }
    // Every G contributes two all-equal vectors; the half-split counts are
    // C(2,1) + C(4,2) + C(6,3) + C(8,4).
    assert_eq!(
        endpoint_cases, 14,
        "expected 2 endpoint vectors per group size"
    );
    assert_eq!(
        half_cases,
        2 + 6 + 20 + 70,
        "expected every exact half-split"
    );
    println!(
        "PASS criterion 3 (endpoint laws): exhaustive binary G <= 8, \
         {endpoint_cases} endpoint + {half_cases} half-split vectors, max |delta| = {worst:.2e} (<= 1e-9)"
    );
}

#[test]
fn criterion_4_gradient_ratio_exactness() {
    let t0 = Instant::now();
    let probe =
        TabularPolicy::random(probe_config().layout(), 4242, 0.8).expect("probe layout is valid");
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    for &g in &[4usize, 8, 12, 16] {
        for n in 1..g {
            let p = n as f64 / g as f64;
            let closed = rho_closed_form(p).expect("p is interior");
            let measured =
                empirical_gradient_ratio(p, g, &probe, derive_seed2(0xACCE97, g as u64, n as u64))
                    .expect("interior N is non-degenerate");
            let rel = (measured - closed).abs() / closed;
            assert!(
                rel <= 1e-6,
                "ratio off at G = {g}, N = {n}: measured {measured}, closed form {closed}, rel {rel:.2e}"
            );
            worst = worst.max(rel);
            cases += 1;
        }
    }
    let elapsed = t0.elapsed();
    assert_eq!(cases, 36);
    assert!(
        elapsed < Duration::from_secs(10),
        "sweep took {elapsed:?}, want < 10 s"
    );
    println!(
        "PASS criterion 4 (gradient-ratio exactness): 36 (G, N) cases, \
         max rel err = {worst:.2e} (<= 1e-6), {elapsed:?} (< 10 s)"
    );
}

#[test]
fn criterion_5_ratio_case_table() {
    let probe =
        TabularPolicy::random(probe_config().layout(), 4242, 0.8).expect("probe layout is valid");
    let report = rho_case_sweep(0.05, &probe, 0xA11CE).expect("grid step is valid");
    assert_eq!(report.rows.len(), 19, "grid 0.05..0.95 step 0.05");
    let mut saw_midpoint = false;
    for row in &report.rows {
        if row.p < 0.5 {
            assert!(
                row.closed_form > 1.0,
                "rho({}) = {} should exceed 1",
                row.p,
                row.closed_form
            );
        } else if row.p > 0.5 {
            assert!(
                row.closed_form > 0.0 && row.closed_form < 1.0,
                "rho({}) = {} should lie in (0, 1)",
                row.p,
                row.closed_form
            );
        } else {
            assert!(
                (row.closed_form - 1.0).abs() <= 1e-12,
                "rho(1/2) = {} should be 1 within 1e-12",
                row.closed_form
            );
            saw_midpoint = true;
        }
    }
    assert!(saw_midpoint, "grid must contain p = 1/2 exactly");
    assert!(
        report.non_increasing(),
        "rho must be non-increasing across the grid"
    );
    println!(
        "PASS criterion 5 (case table): rho > 1 below 1/2, = 1 at it (+/- 1e-12), \
         in (0, 1) above, non-increasing; closed-vs-measured max |delta| = {:.2e}",
        report.max_abs_error
    );
}

#[test]
fn criterion_6_gradient_matches_finite_differences() {
    let cfg = ObjectiveConfig::default();
    let pc = probe_config();
    let mut worst = 0.0f64;
    let mut total_live = 0usize;
    for seed in 1..=20u64 {
        let theta = TabularPolicy::random(pc.layout(), derive_seed(seed, 9), 0.6)
            .expect("probe layout is valid");
        let behavior =
            TabularPolicy::random(pc.layout(), seed, 0.7).expect("probe layout is valid");
        let tasks = make_curriculum(2, DifficultyProfile::Uniform, seed, &pc.layout())
            .expect("two tasks fit the layout");
        let mut groups = Vec::new();
        let mut advantages = Vec::new();
        for (i, task) in tasks.iter().enumerate() {
            let mut group = sample_group(&behavior, task, 4, derive_seed2(seed, 7, i as u64))
                .expect("sampling from finite logits succeeds");
            let rewards = score_group(&mut group, &RewardConfig::default(), &pc.layout().vocab)
                .expect("scoring sampled rollouts succeeds");
            let stats = group_stats(rewards.values()).expect("group size is valid");
            advantages.push(estimate(
                rewards.values(),
                &stats,
                &EstimatorSpec {
                    kind: EstimatorKind::Grpo,
                    ..Default::default()
                },
            ));
            groups.push(group);
        }
        let grad = batch_exact_gradient(&groups, &advantages, &theta, &cfg, &behavior)
            .expect("gradient of a finite batch succeeds");
        let h = 1e-6;
        let mut live = 0usize;
        for (i, &g_i) in grad.iter().enumerate() {
            if g_i.abs() <= 1e-8 {
                continue;
            }
            live += 1;
            let mut plus = theta.clone();
            plus.params_mut()[i] += h;
            let mut minus = theta.clone();
            minus.params_mut()[i] -= h;
            let j_plus = batch_surrogate_loss(&groups, &advantages, &plus, &cfg, &behavior)
                .expect("loss at perturbed point succeeds");
            let j_minus = batch_surrogate_loss(&groups, &advantages, &minus, &cfg, &behavior)
                .expect("loss at perturbed point succeeds");
            let fd = (j_plus - j_minus) / (2.0 * h);
            let rel = (fd - g_i).abs() / g_i.abs().max(fd.abs());
            assert!(
                rel <= 1e-5,
                "seed {seed}, coordinate {i}: analytic {g_i}, finite difference {fd}, rel {rel:.2e}"
            );
            worst = worst.max(rel);
        }
        assert!(
            live >= 10,
            "seed {seed}: only {live} live coordinates, probe too small"
        );
        total_live += live;
    }
    println!(
        "PASS criterion 6 (gradient vs finite differences): 20 random policy/batch draws, \
         {total_live} live coordinates, max rel err = {worst:.2e} (<= 1e-5)"
    );
}

#[test]
fn criterion_7_binomial_success_spectrum() {
    let t0 = Instant::now();
    // Scaffolded format with a uniform two-way answer slot and one correct
    // answer: per-trajectory success probability is exactly 1/2.
    let pc = PolicyConfig {
        n_think_tokens: 1,
        n_answer_tokens: 2,
        n_prompt_symbols: 1,
        context_order: 1,
        max_len: 6,
        init: PolicyInit::FormatScaffold,
    };
    let layout = pc.layout();
    let policy = pc.build().expect("scaffold layout is valid");
    let task = TaskInstance {
        prompt_id: 0,
        prompt: vec![0],
        ground_truth: layout.vocab.answer(0),
        correct_answers: vec![layout.vocab.answer(0)],
        difficulty: 0.5,
    };
    let report = certainty_spectrum(&policy, &[task], 8, 10_000, 31, &RewardConfig::default())
        .expect("spectrum config is valid");
    let hist = &report.per_task[0].hist;
    let coeffs = [1.0, 8.0, 28.0, 56.0, 70.0, 56.0, 28.0, 8.0, 1.0];
    let chi2: f64 = hist
        .iter()
        .zip(&coeffs)
        .map(|(&obs, c)| {
            let expected = 10_000.0 * c / 256.0;
            let d = obs as f64 - expected;
            d * d / expected
        })
        .sum();
    let threshold = ChiSquared::new(8.0)
        .expect("8 degrees of freedom")
        .inverse_cdf(0.99);
    assert!(
        (threshold - 20.090235029663233).abs() <= 1e-6,
        "chi-square critical value sanity check failed: {threshold}"
    );
    assert!(
        chi2 < threshold,
        "success-count histogram {hist:?} fails the Binomial(8, 1/2) test: \
         chi2 = {chi2:.3} >= {threshold:.3}"
    );
    let var = report.per_task[0].var_n;
    assert!((var - 2.0).abs() <= 0.1, "Var(N) = {var}, want 2.0 +/- 0.1");
    let elapsed = t0.elapsed();
    assert!(
        elapsed < Duration::from_secs(30),
        "spectrum took {elapsed:?}, want < 30 s"
    );
    println!(
        "PASS criterion 7 (binomial spectrum): 10,000 groups of 8, chi2 = {chi2:.3} \
         (< {threshold:.3} at alpha = 0.01), Var(N) = {var:.3} (2.0 +/- 0.1), {elapsed:?} (< 30 s)"
    );
}

#[test]
fn criterion_8_training_reaches_90_percent() {
    let pc = PolicyConfig {
        init: PolicyInit::FormatScaffold,
        ..Default::default()
    };
    let tasks = make_curriculum(1, DifficultyProfile::Uniform, 7, &pc.layout())
        .expect("single-task curriculum is valid");
    let mut finals = Vec::new();
    for seed in 1..=5u64 {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            steps: 200,
            group_size: 8,
            rollout_batch: 8,
            seed,
            estimator: EstimatorSpec {
                kind: EstimatorKind::Mapo,
                ..Default::default()
            },
            ..Default::default()
        };
        let output = train(&cfg, pc.build().expect("scaffold builds"), &tasks)
            .expect("training the smoke config succeeds");
        let final_rate = output.records.last().expect("steps >= 1").success_rate;
        let elapsed = t0.elapsed();
        assert!(
            final_rate >= 0.9,
            "seed {seed}: final success rate {final_rate} < 0.9"
        );
        assert!(
            elapsed < Duration::from_secs(60),
            "seed {seed} took {elapsed:?}, want < 60 s"
        );
        finals.push(final_rate);
    }
    println!(
        "PASS criterion 8 (training smoke): single task, 200 steps, G = 8, \
         final success rates {finals:?} (every seed >= 0.9, < 60 s each)"
    );
}

#[test]
fn criterion_9_bitwise_deterministic_artifacts() {
    let bin = env!("CARGO_BIN_EXE_mapo");
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("run");
    let config_path = dir.path().join("exp.toml");
    std::fs::write(
        &config_path,
        format!(
            "out_dir = \"{}\"\n\n[policy]\ninit = \"format-scaffold\"\n\n\
             [curriculum]\nn_tasks = 2\n\n[train]\nsteps = 10\nrollout_batch = 4\nseed = 5\n",
            out.display()
        ),
    )
    .expect("write config");
    let run_train = || {
        let output = std::process::Command::new(bin)
            .args(["train", config_path.to_str().expect("utf-8 temp path")])
            .env_clear()
            .output()
            .expect("spawn mapo train");
        assert!(
            output.status.success(),
            "train failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    run_train();
    let metrics_1 = std::fs::read(out.join("metrics.csv")).expect("metrics written");
    let policy_1 = std::fs::read(out.join("policy.bin")).expect("policy written");
    let manifest_1 = std::fs::read(out.join("manifest.json")).expect("manifest written");
    run_train();
    assert_eq!(
        metrics_1,
        std::fs::read(out.join("metrics.csv")).unwrap(),
        "metrics.csv changed"
    );
    assert_eq!(
        policy_1,
        std::fs::read(out.join("policy.bin")).unwrap(),
        "policy.bin changed"
    );
    assert_eq!(
        manifest_1,
        std::fs::read(out.join("manifest.json")).unwrap(),
        "manifest.json changed"
    );

    let verify_out = dir.path().join("verify");
    let run_verify = || {
        let output = std::process::Command::new(bin)
            .args([
                "verify",
                "--out-dir",
                verify_out.to_str().expect("utf-8 temp path"),
            ])
            .env_clear()
            .output()
            .expect("spawn mapo verify");
        assert!(
            output.status.success(),
            "verify failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        String::from_utf8(output.stdout).expect("verify output is utf-8")
    };
    let stdout = run_verify();
    assert!(
        stdout.contains("-1.73"),
        "verify report must include the -1.73 reproduction line"
    );
    let pathology_1 = std::fs::read(verify_out.join("pathology.csv")).expect("pathology written");
    let ratio_1 = std::fs::read(verify_out.join("ratio.csv")).expect("ratio written");
    run_verify();
    assert_eq!(
        pathology_1,
        std::fs::read(verify_out.join("pathology.csv")).unwrap(),
        "pathology.csv changed"
    );
    assert_eq!(
        ratio_1,
        std::fs::read(verify_out.join("ratio.csv")).unwrap(),
        "ratio.csv changed"
    );
    println!(
        "PASS criterion 9 (determinism): repeated train and verify runs produced \
         byte-identical metrics.csv, policy.bin, manifest.json, pathology.csv, ratio.csv"
    );
}

/// The split helper is part of the criterion-8/9 plumbing: a fraction below
/// one must always leave at least one training task.
#[test]
fn split_never_empties_the_training_set() {
    let pc = PolicyConfig::default();
    let tasks = make_curriculum(5, DifficultyProfile::Uniform, 7, &pc.layout()).unwrap();
    let (train_tasks, holdout) = split_curriculum(&tasks, 0.99, 7);
    assert!(!train_tasks.is_empty());
    assert_eq!(train_tasks.len() + holdout.len(), 5);
}
