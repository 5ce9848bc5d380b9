//! `mapo`: config-driven experiments for group-relative policy optimization.
//!
//! Four subcommands:
//! - `train <config>`: one training run; writes `metrics.csv`, `policy.bin`,
//!   and `manifest.json` (plus `spectrum.csv` when enabled) into the
//!   resolved output directory;
//! - `compare <config> --estimators a,b,…`: one run per estimator kind on a
//!   shared curriculum and seed, one subdirectory each, plus `merged.csv`
//!   keyed by (estimator, step) and a final-accuracy `summary.csv`;
//! - `verify`: the self-test suite — one pass/fail line per check — plus the
//!   `pathology.csv` and `ratio.csv` diagnostic tables;
//! - `eval <config> --policy <file>`: accuracy of a saved policy on the
//!   config's train/held-out curriculum splits.
//!
//! Exit codes: 0 success; 1 failed verification or runtime error; 2 invalid
//! arguments or config (messages carry `file:line` anchors); 3 training
//! aborted on a non-finite value (the offending group dump path is printed).
//!
//! Config values resolve file < `MAPO_*` environment variables < flags
//! (`--seed`, `--out-dir`). No command modifies its input config file.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mapo_core::analysis::{
    certainty_spectrum, pathology_report, run_verify_checks, verify_ratio_report,
};
use mapo_core::config::{
    config_hash, config_hash_raw, load_config, ConfigOverrides, ExperimentConfig,
};
use mapo_core::io::{
    read_policy, write_manifest, write_merged_metrics_csv, write_metrics_csv, write_pathology_csv,
    write_policy, write_ratio_csv, write_spectrum_csv, write_summary_csv, RunManifest, SummaryRow,
    MANIFEST_FORMAT_VERSION,
};
use mapo_core::policy_env::{split_curriculum, TaskInstance};
use mapo_core::trainer::{eval_policy, train, EvalReport, TrainError, TrainOutput};
use mapo_core::{make_curriculum, EstimatorKind, TabularPolicy};

#[derive(Parser)]
#[command(
    name = "mapo",
    version,
    about = "Group-relative policy optimization laboratory"
)]
struct Cli {
    /// Replace `train.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap worker threads (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Replace `out_dir` from the config (for `verify`: where the
    /// diagnostic tables go; default `runs`).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and write metrics, manifest, and the final policy.
    Train {
        /// TOML experiment config.
        config: PathBuf,
    },
    /// Train one run per estimator kind on a shared curriculum and seeds.
    Compare {
        /// TOML experiment config.
        config: PathBuf,
        /// Estimator kinds to race, comma-separated; at least two, no
        /// duplicates (grpo, dr-grpo, gpg, tree-rpo, apd, mapo).
        #[arg(long, value_delimiter = ',', required = true)]
        estimators: Vec<EstimatorKind>,
    },
    /// Run every self-test check and write the diagnostic tables.
    Verify,
    /// Evaluate a saved policy on a config's curriculum splits.
    Eval {
        /// TOML experiment config (defines curriculum, splits, sampling).
        config: PathBuf,
        /// Policy file written by `train`.
        #[arg(long)]
        policy: PathBuf,
    },
}

/// Terminal failure: message for stderr plus the process exit code.
struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(fail(2, "--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| fail(1, format!("thread pool: {e}")))?;
    }
    let overrides = ConfigOverrides {
        env: std::env::vars().collect(),
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
    };
    match cli.command {
        Command::Train { config } => cmd_train(&config, &overrides),
        Command::Compare { config, estimators } => cmd_compare(&config, &estimators, &overrides),
        Command::Verify => cmd_verify(cli.out_dir.as_deref()),
        Command::Eval { config, policy } => cmd_eval(&config, &policy, &overrides),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Everything a run consumes: resolved config, its hash, and the curriculum
/// split the way both training and evaluation see it.
struct World {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
    train_tasks: Vec<TaskInstance>,
    holdout_tasks: Vec<TaskInstance>,
}

fn load_world(config_path: &Path, overrides: &ConfigOverrides) -> Result<World, Failure> {
    let cfg = load_config(config_path, overrides).map_err(|e| fail(2, e))?;
    let layout = cfg.policy.layout();
    let tasks = make_curriculum(
        cfg.curriculum.n_tasks,
        cfg.curriculum.profile,
        cfg.curriculum.seed,
        &layout,
    )
    .map_err(|e| fail(2, format!("curriculum: {e}")))?;
    // Split with the curriculum seed so the same config always evaluates
    // the same held-out tasks, whatever the training seed.
    let (train_tasks, holdout_tasks) =
        split_curriculum(&tasks, cfg.eval.holdout_fraction, cfg.curriculum.seed);
    let hash = config_hash(&cfg);
    let out = PathBuf::from(&cfg.out_dir);
    Ok(World {
        cfg,
        hash,
        out,
        train_tasks,
        holdout_tasks,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| fail(1, format!("cannot create {}: {e}", dir.display())))
}

/// Map a training error to its exit code; a non-finite abort writes the
/// offending group dump next to the run's other artifacts first.
fn train_failure(err: TrainError, out: &Path) -> Failure {
    match err {
        TrainError::InvalidConfig(msg) => fail(2, format!("invalid config: {msg}")),
        TrainError::EmptyCurriculum => fail(2, "curriculum is empty after the held-out split"),
        TrainError::NonFinite { step, what, dump } => {
            let path = out.join(format!("nan-dump-step-{step}.json"));
            match std::fs::write(&path, dump) {
                Ok(()) => fail(
                    3,
                    format!(
                        "non-finite {what} at step {step}; group dump: {}",
                        path.display()
                    ),
                ),
                Err(e) => fail(
                    3,
                    format!("non-finite {what} at step {step}; dump not written: {e}"),
                ),
            }
        }
        other => fail(1, other),
    }
}

/// One training leg: run, then write `metrics.csv`, `policy.bin`, and
/// `manifest.json` into `dir`.
fn run_leg(
    cfg: &ExperimentConfig,
    hash: &str,
    command: String,
    dir: &Path,
    train_tasks: &[TaskInstance],
) -> Result<TrainOutput, Failure> {
    ensure_dir(dir)?;
    let policy = cfg
        .policy
        .build()
        .map_err(|e| fail(2, format!("policy: {e}")))?;
    let output = train(&cfg.train, policy, train_tasks).map_err(|e| train_failure(e, dir))?;
    write_metrics_csv(
        &dir.join("metrics.csv"),
        hash,
        cfg.train.group_size,
        &output.records,
    )
    .map_err(|e| fail(1, e))?;
    write_policy(
        &dir.join("policy.bin"),
        &output.policy,
        &config_hash_raw(cfg),
    )
    .map_err(|e| fail(1, e))?;
    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command,
        config_hash: hash.to_string(),
        config: cfg.clone(),
    };
    write_manifest(&dir.join("manifest.json"), &manifest).map_err(|e| fail(1, e))?;
    Ok(output)
}

fn run_eval(
    policy: &TabularPolicy,
    world: &World,
    cfg: &ExperimentConfig,
) -> Result<EvalReport, Failure> {
    eval_policy(
        policy,
        &world.train_tasks,
        &world.holdout_tasks,
        cfg.eval.samples_per_task,
        cfg.eval.temperature,
        cfg.eval.seed,
        &cfg.train.reward,
    )
    .map_err(|e| fail(1, format!("evaluation: {e}")))
}

fn opt_accuracy(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_train(config_path: &Path, overrides: &ConfigOverrides) -> Result<(), Failure> {
    let world = load_world(config_path, overrides)?;
    println!("config hash: {}", world.hash);
    let output = run_leg(
        &world.cfg,
        &world.hash,
        "train".into(),
        &world.out,
        &world.train_tasks,
    )?;
    let last = output.records.last().expect("steps >= 1 is validated");
    println!(
        "trained {} steps ({} estimator, G = {}): final success rate {:.4}, mean reward {:.4}",
        world.cfg.train.steps,
        world.cfg.train.estimator.kind,
        world.cfg.train.group_size,
        last.success_rate,
        last.mean_reward,
    );
    if world.cfg.analysis.spectrum {
        // Spectrum over the full curriculum: held-out tasks are exactly the
        // interesting ones for the certainty profile.
        let mut all_tasks = world.train_tasks.clone();
        all_tasks.extend(world.holdout_tasks.iter().cloned());
        all_tasks.sort_by_key(|t| t.prompt_id);
        let report = certainty_spectrum(
            &output.policy,
            &all_tasks,
            world.cfg.train.group_size,
            world.cfg.analysis.spectrum_groups,
            world.cfg.eval.seed,
            &world.cfg.train.reward,
        )
        .map_err(|e| fail(1, format!("spectrum: {e}")))?;
        write_spectrum_csv(&world.out.join("spectrum.csv"), &report).map_err(|e| fail(1, e))?;
        println!("wrote {}", world.out.join("spectrum.csv").display());
    }
    println!(
        "wrote {}, {}, {}",
        world.out.join("metrics.csv").display(),
        world.out.join("policy.bin").display(),
        world.out.join("manifest.json").display(),
    );
    Ok(())
}

fn cmd_compare(
    config_path: &Path,
    estimators: &[EstimatorKind],
    overrides: &ConfigOverrides,
) -> Result<(), Failure> {
    for (i, kind) in estimators.iter().enumerate() {
        if estimators[..i].contains(kind) {
            return Err(fail(
                2,
                format!("duplicate estimator '{kind}' in --estimators"),
            ));
        }
    }
    if estimators.len() < 2 {
        return Err(fail(
            2,
            format!(
                "compare needs at least two estimator kinds, got {}",
                estimators.len()
            ),
        ));
    }
    let world = load_world(config_path, overrides)?;
    println!("config hash: {}", world.hash);
    ensure_dir(&world.out)?;
    let mut runs: Vec<(String, Vec<_>)> = Vec::with_capacity(estimators.len());
    let mut rows = Vec::with_capacity(estimators.len());
    for &kind in estimators {
        // Legs differ only in the estimator; curriculum, split, and every
        // seed are shared, so the reward streams are directly comparable.
        let mut leg = world.cfg.clone();
        leg.train.estimator.kind = kind;
        let leg_hash = config_hash(&leg);
        let dir = world.out.join(kind.name());
        let output = run_leg(
            &leg,
            &leg_hash,
            format!("compare:{}", kind.name()),
            &dir,
            &world.train_tasks,
        )?;
        let eval = run_eval(&output.policy, &world, &leg)?;
        let last = output.records.last().expect("steps >= 1 is validated");
        println!(
            "{kind}: final success rate {:.4}, eval in-domain {}, held-out {}",
            last.success_rate,
            opt_accuracy(eval.in_domain),
            opt_accuracy(eval.held_out),
        );
        rows.push(SummaryRow {
            estimator: kind.name().into(),
            final_success_rate: last.success_rate,
            final_mean_reward: last.mean_reward,
            eval_in_domain: eval.in_domain,
            eval_held_out: eval.held_out,
        });
        runs.push((kind.name().to_string(), output.records));
    }
    let group_size = world.cfg.train.group_size;
    write_merged_metrics_csv(
        &world.out.join("merged.csv"),
        &world.hash,
        group_size,
        &runs,
    )
    .map_err(|e| fail(1, e))?;
    write_summary_csv(&world.out.join("summary.csv"), &world.hash, &rows)
        .map_err(|e| fail(1, e))?;
    println!(
        "wrote {}, {}",
        world.out.join("merged.csv").display(),
        world.out.join("summary.csv").display(),
    );
    Ok(())
}

fn cmd_verify(out_dir: Option<&str>) -> Result<(), Failure> {
    let results = run_verify_checks(None);
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {} (expected {})", r.name, r.measured, r.expected);
    }
    let out = PathBuf::from(out_dir.unwrap_or("runs"));
    ensure_dir(&out)?;
    write_pathology_csv(&out.join("pathology.csv"), &pathology_report()).map_err(|e| fail(1, e))?;
    write_ratio_csv(&out.join("ratio.csv"), &verify_ratio_report()).map_err(|e| fail(1, e))?;
    println!(
        "wrote {}, {}",
        out.join("pathology.csv").display(),
        out.join("ratio.csv").display(),
    );
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} checks passed", results.len());
    if passed == results.len() {
        Ok(())
    } else {
        Err(fail(1, format!("{} checks failed", results.len() - passed)))
    }
}

fn cmd_eval(
    config_path: &Path,
    policy_path: &Path,
    overrides: &ConfigOverrides,
) -> Result<(), Failure> {
    let world = load_world(config_path, overrides)?;
    let (policy, embedded_hash) = read_policy(policy_path).map_err(|e| fail(2, e))?;
    let expected = world.cfg.policy.layout();
    if policy.layout() != &expected {
        return Err(fail(
            2,
            format!(
                "policy file layout {:?} does not match the config's policy section {expected:?}",
                policy.layout()
            ),
        ));
    }
    let embedded = hex_string(&embedded_hash);
    println!(
        "policy: {} (trained under config hash {embedded})",
        policy_path.display()
    );
    if embedded != world.hash {
        eprintln!(
            "note: this config resolves to hash {}, not the one the policy was trained under",
            world.hash
        );
    }
    let report = run_eval(&policy, &world, &world.cfg)?;
    println!(
        "in-domain accuracy: {} over {} tasks",
        opt_accuracy(report.in_domain),
        world.train_tasks.len(),
    );
    println!(
        "held-out accuracy: {} over {} tasks",
        opt_accuracy(report.held_out),
        world.holdout_tasks.len(),
    );
    println!("mean accuracy: {:.4}", report.mean_accuracy);
    Ok(())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
