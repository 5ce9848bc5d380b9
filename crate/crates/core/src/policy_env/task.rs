//! Task instances and curriculum generation.
//!
//! A task is a prompt plus the set of answer tokens that count as correct.
//! Difficulty is structural: a task with `k` correct-equivalent answers out
//! of an answer sub-vocabulary of size `m` has base success rate `k / m`
//! under a format-correct uniform policy, so curricula can target any part
//! of the certainty spectrum without label noise.

use super::policy::PolicyLayout;
use crate::rng::{derive_seed, seeded_rng};
use crate::types::TokenId;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// On-disk curriculum format version.
pub const CURRICULUM_FORMAT_VERSION: u32 = 1;

/// Seed-derivation tag for the train/holdout split.
const SPLIT_TAG: u64 = 0x5350_4C49;

#[derive(Debug, Error, PartialEq)]
pub enum CurriculumError {
    #[error("curriculum needs at least 1 task, got {0}")]
    Empty(usize),
    #[error("unknown difficulty profile {0:?}; expected uniform, bimodal, or hard-heavy")]
    UnknownProfile(String),
    #[error("curriculum file version {got} unsupported (expected {CURRICULUM_FORMAT_VERSION})")]
    UnsupportedVersion { got: u32 },
    #[error("curriculum file malformed: {0}")]
    Malformed(String),
    #[error("task {prompt_id}: {reason}")]
    InvalidTask { prompt_id: u64, reason: String },
}

/// One verifiable task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub prompt_id: u64,
    /// Prompt symbols (context-only alphabet) that seed generation.
    pub prompt: Vec<usize>,
    /// Canonical correct answer; always a member of `correct_answers`.
    pub ground_truth: TokenId,
    /// Reward-equivalent answer set (`k` tokens from the answer
    /// sub-vocabulary). Scoring accepts any member.
    pub correct_answers: Vec<TokenId>,
    /// `1 - k / m`: zero when every answer is accepted, close to one when a
    /// single token is.
    pub difficulty: f64,
}

impl TaskInstance {
    /// Structural validation against a concrete layout.
    pub fn validate(&self, layout: &PolicyLayout) -> Result<(), CurriculumError> {
        let bad = |reason: String| CurriculumError::InvalidTask {
            prompt_id: self.prompt_id,
            reason,
        };
        if self.correct_answers.is_empty() {
            return Err(bad("correct_answers must be non-empty".into()));
        }
        if !self.correct_answers.contains(&self.ground_truth) {
            return Err(bad(format!(
                "ground_truth {} not in correct_answers {:?}",
                self.ground_truth, self.correct_answers
            )));
        }
        for &a in &self.correct_answers {
            if !layout.vocab.is_answer(a) {
                return Err(bad(format!(
                    "token {a} is not in the answer sub-vocabulary"
                )));
            }
        }
        for &p in &self.prompt {
            if p >= layout.n_prompt_symbols {
                return Err(bad(format!(
                    "prompt symbol {p} outside alphabet of size {}",
                    layout.n_prompt_symbols
                )));
            }
        }
        Ok(())
    }
}

/// How task difficulties are spread across a curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifficultyProfile {
    /// `k` uniform over `1..=m`: base success rates spread evenly.
    Uniform,
    /// `k` split between 1 and `m`: mass at both certainty endpoints.
    Bimodal,
    /// `k` concentrated at 1-2: most tasks have low base success rate.
    HardHeavy,
}

impl fmt::Display for DifficultyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifficultyProfile::Uniform => "uniform",
            DifficultyProfile::Bimodal => "bimodal",
            DifficultyProfile::HardHeavy => "hard-heavy",
        })
    }
}

impl FromStr for DifficultyProfile {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(DifficultyProfile::Uniform),
            "bimodal" => Ok(DifficultyProfile::Bimodal),
            "hard-heavy" => Ok(DifficultyProfile::HardHeavy),
            other => Err(CurriculumError::UnknownProfile(other.to_string())),
        }
    }
}

/// Generate `n_tasks` tasks with the given difficulty profile.
///
/// Deterministic in `seed`. Each task gets a one-symbol prompt cycling
/// through the prompt alphabet and a seeded draw of `k` distinct correct
/// answers, where `k` follows the profile.
pub fn make_curriculum(
    n_tasks: usize,
    profile: DifficultyProfile,
    seed: u64,
    layout: &PolicyLayout,
) -> Result<Vec<TaskInstance>, CurriculumError> {
    if n_tasks == 0 {
        return Err(CurriculumError::Empty(0));
    }
    let m = layout.vocab.n_answers;
    let mut tasks = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let mut rng = seeded_rng(derive_seed(seed, i as u64));
        let k = match profile {
            DifficultyProfile::Uniform => rng.random_range(1..=m),
            DifficultyProfile::Bimodal => {
                if rng.random::<f64>() < 0.5 {
                    1
                } else {
                    m
                }
            }
            DifficultyProfile::HardHeavy => {
                let u = rng.random::<f64>();
                if u < 0.7 {
                    1
                } else if u < 0.9 {
                    2.min(m)
                } else {
                    rng.random_range(1..=m)
                }
            }
        };
        // Partial Fisher-Yates: first k entries of a seeded shuffle.
        let mut answers: Vec<usize> = (0..m).collect();
        for j in 0..k {
            let swap = rng.random_range(j..m);
            answers.swap(j, swap);
        }
        let correct_answers: Vec<TokenId> = answers[..k]
            .iter()
            .map(|&a| layout.vocab.answer(a))
            .collect();
        tasks.push(TaskInstance {
            prompt_id: i as u64,
            prompt: vec![i % layout.n_prompt_symbols],
            ground_truth: correct_answers[0],
            correct_answers,
            difficulty: 1.0 - k as f64 / m as f64,
        });
    }
    Ok(tasks)
}

/// Deterministically split a curriculum into (train, held-out) parts.
///
/// The held-out count is `floor(fraction * n)`; indices are shuffled by a
/// seed derived from `seed` so the split is stable for a given config.
pub fn split_curriculum(
    tasks: &[TaskInstance],
    holdout_fraction: f64,
    seed: u64,
) -> (Vec<TaskInstance>, Vec<TaskInstance>) {
    let n = tasks.len();
    let n_holdout = (holdout_fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(derive_seed(seed, SPLIT_TAG));
    for j in (1..n).rev() {
        let swap = rng.random_range(0..=j);
        order.swap(j, swap);
    }
    let holdout: Vec<TaskInstance> = order[..n_holdout]
        .iter()
        .map(|&i| tasks[i].clone())
        .collect();
    let train: Vec<TaskInstance> = order[n_holdout..]
        .iter()
        .map(|&i| tasks[i].clone())
        .collect();
    (train, holdout)
}

#[derive(Serialize, Deserialize)]
struct CurriculumFile {
    version: u32,
    tasks: Vec<TaskInstance>,
}

/// Serialize a curriculum to the versioned JSON format.
pub fn curriculum_to_json(tasks: &[TaskInstance]) -> String {
    serde_json::to_string_pretty(&CurriculumFile {
        version: CURRICULUM_FORMAT_VERSION,
        tasks: tasks.to_vec(),
    })
    .expect("curriculum serialization is infallible")
}

/// Decode a curriculum file. Total: malformed input is an error, never a
/// panic (this is a fuzzed entry point).
pub fn curriculum_from_json(text: &str) -> Result<Vec<TaskInstance>, CurriculumError> {
    let file: CurriculumFile =
        serde_json::from_str(text).map_err(|e| CurriculumError::Malformed(e.to_string()))?;
    if file.version != CURRICULUM_FORMAT_VERSION {
        return Err(CurriculumError::UnsupportedVersion { got: file.version });
    }
    if file.tasks.is_empty() {
        return Err(CurriculumError::Empty(0));
    }
    Ok(file.tasks)
}
