//! Verifiable reward channels.
//!
//! Two binary components per rollout — structural format and answer
//! accuracy — combined as `(1 - beta) * format + beta * accuracy`. With the
//! default `beta = 0.9` the reward alphabet is `{0, 0.1, 0.9, 1.0}`, and the
//! combination is evaluated in a form that lands on `1.0` *exactly* when
//! both components are 1, so the strict success indicator `r == 1` is
//! well defined in floating point.

use crate::policy_env::{RolloutGroup, Vocab, ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};
use crate::types::{GroupError, RewardComponents, RewardVector, TokenId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reward component {value} is not binary (expected exactly 0 or 1)")]
    NonBinaryComponent { value: f64 },
    #[error("reward weight beta_r = {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Structural predicate used for the format channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FormatRule {
    /// Exactly one think segment followed by exactly one answer segment.
    #[default]
    ThinkAnswerTags,
}

/// Rule for pulling the candidate answer out of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerExtractor {
    /// The contents of the first answer segment.
    #[default]
    FirstAnswerSegment,
}

/// Reward channel configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Accuracy weight in the combined reward.
    pub beta_r: f64,
    pub format_rule: FormatRule,
    pub answer_extractor: AnswerExtractor,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta_r: 0.9,
            format_rule: FormatRule::ThinkAnswerTags,
            answer_extractor: AnswerExtractor::FirstAnswerSegment,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(0.0..=1.0).contains(&self.beta_r) {
            return Err(RewardError::WeightOutOfRange(self.beta_r));
        }
        Ok(())
    }
}

/// Format reward: 1 iff the sequence contains each of the four markers
/// exactly once, in think-open, think-close, answer-open, answer-close
/// order. Total on arbitrary token sequences; anything unparseable is 0.
///
/// # Edge cases
/// - an empty think body is fine (the markers alone satisfy the rule);
/// - a second answer segment (duplicate markers) fails;
/// - filler tokens before, between, or after segments are tolerated.
pub fn format_reward(tokens: &[TokenId], _vocab: &Vocab) -> f64 {
    let only = |marker: TokenId| -> Option<usize> {
        let mut it = tokens.iter().enumerate().filter(|(_, &t)| t == marker);
        let first = it.next()?.0;
        if it.next().is_some() {
            return None; // duplicated marker
        }
        Some(first)
    };
    match (
        only(THINK_OPEN),
        only(THINK_CLOSE),
        only(ANSWER_OPEN),
        only(ANSWER_CLOSE),
    ) {
        (Some(a), Some(b), Some(c), Some(d)) if a < b && b < c && c < d => 1.0,
        _ => 0.0,
    }
}

/// The candidate answer: contents of the first answer segment, if that
/// segment exists, is closed, and holds exactly one token.
pub fn extract_answer(tokens: &[TokenId], _vocab: &Vocab) -> Option<TokenId> {
    let open = tokens.iter().position(|&t| t == ANSWER_OPEN)?;
    let rest = &tokens[open + 1..];
    let close = rest.iter().position(|&t| t == ANSWER_CLOSE)?;
    match rest[..close] {
        [single] => Some(single),
        _ => None,
    }
}

/// Accuracy reward against a single ground-truth token: 1 iff the first
/// answer segment holds exactly that token. Total; unparseable rollouts
/// score 0. Format does not need to pass for accuracy to pass (a bare
/// answer segment without the think scaffold can still be correct).
pub fn accuracy_reward(tokens: &[TokenId], ground_truth: TokenId, vocab: &Vocab) -> f64 {
    match extract_answer(tokens, vocab) {
        Some(answer) if answer == ground_truth => 1.0,
        _ => 0.0,
    }
}

/// Accuracy against a task's reward-equivalent answer set.
pub fn accuracy_reward_any(tokens: &[TokenId], correct: &[TokenId], vocab: &Vocab) -> f64 {
    match extract_answer(tokens, vocab) {
        Some(answer) if correct.contains(&answer) => 1.0,
        _ => 0.0,
    }
}

/// Combine binary format/accuracy components.
///
/// Evaluated as `format + beta * (accuracy - format)`, which is the same
/// affine map as `(1 - beta) * format + beta * accuracy` but is exact at
/// both endpoints: `(1, 1)` gives `1.0` with no rounding, so the strict
/// success test `r == 1` holds iff both components are 1 (for `beta`
/// strictly inside `(0, 1)`).
///
/// # Edge cases
/// - components other than exactly 0 or 1 are a contract violation.
pub fn combined_reward(format: f64, accuracy: f64, cfg: &RewardConfig) -> Result<f64, RewardError> {
    for value in [format, accuracy] {
        if value != 0.0 && value != 1.0 {
            return Err(RewardError::NonBinaryComponent { value });
        }
    }
    Ok(format + cfg.beta_r * (accuracy - format))
}

/// Score every trajectory of a group in place and return the validated
/// reward vector (with components attached for auditing).
pub fn score_group(
    group: &mut RolloutGroup,
    cfg: &RewardConfig,
    vocab: &Vocab,
) -> Result<RewardVector, RewardError> {
    let correct = group.task.correct_answers.clone();
    let mut values = Vec::with_capacity(group.trajectories.len());
    let mut components = Vec::with_capacity(group.trajectories.len());
    for traj in &mut group.trajectories {
        let format = format_reward(&traj.tokens, vocab);
        let accuracy = accuracy_reward_any(&traj.tokens, &correct, vocab);
        let reward = combined_reward(format, accuracy, cfg)?;
        traj.reward = reward;
        traj.success = reward == 1.0;
        values.push(reward);
        components.push(RewardComponents { format, accuracy });
    }
    Ok(RewardVector::from_parts(values, Some(components))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab {
            n_think: 2,
            n_answers: 4,
        }
    }

    // Shorthand: think filler token and an answer token.
    fn w(v: &Vocab) -> TokenId {
        v.think_tokens().start
    }

    // ---- format_reward ------------------------------------------------------

    #[test]
    fn well_formed_sequence_scores_one() {
        let v = vocab();
        let seven = v.answer(3);
        let tokens = [
            THINK_OPEN,
            w(&v),
            THINK_CLOSE,
            ANSWER_OPEN,
            seven,
            ANSWER_CLOSE,
        ];
        assert_eq!(format_reward(&tokens, &v), 1.0);
    }

    #[test]
    fn empty_think_body_is_still_well_formed() {
        let v = vocab();
        let tokens = [
            THINK_OPEN,
            THINK_CLOSE,
            ANSWER_OPEN,
            v.answer(0),
            ANSWER_CLOSE,
        ];
        assert_eq!(format_reward(&tokens, &v), 1.0);
    }

    #[test]
    fn missing_think_segment_scores_zero() {
        let v = vocab();
        let tokens = [ANSWER_OPEN, v.answer(3), ANSWER_CLOSE];
        assert_eq!(format_reward(&tokens, &v), 0.0);
    }

    #[test]
    fn duplicate_answer_segment_scores_zero() {
        let v = vocab();
        let a = v.answer(3);
        let tokens = [
            THINK_OPEN,
            THINK_CLOSE,
            ANSWER_OPEN,
            a,
            ANSWER_CLOSE,
            ANSWER_OPEN,
            a,
            ANSWER_CLOSE,
        ];
        assert_eq!(format_reward(&tokens, &v), 0.0);
    }

    #[test]
    fn out_of_order_markers_score_zero() {
        let v = vocab();
        let tokens = [
            ANSWER_OPEN,
            v.answer(0),
            ANSWER_CLOSE,
            THINK_OPEN,
            THINK_CLOSE,
        ];
        assert_eq!(format_reward(&tokens, &v), 0.0);
        let tokens = [
            THINK_CLOSE,
            THINK_OPEN,
            ANSWER_OPEN,
            v.answer(0),
            ANSWER_CLOSE,
        ];
        assert_eq!(format_reward(&tokens, &v), 0.0);
    }

    #[test]
    fn format_is_total_on_junk() {
        let v = vocab();
        assert_eq!(format_reward(&[], &v), 0.0);
        assert_eq!(format_reward(&[w(&v); 8], &v), 0.0);
        assert_eq!(format_reward(&[THINK_OPEN; 4], &v), 0.0);
    }

    // ---- accuracy_reward ----------------------------------------------------

    #[test]
    fn exact_answer_match_scores_one() {
        let v = vocab();
        let truth = v.answer(3);
        let tokens = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, truth, ANSWER_CLOSE];
        assert_eq!(accuracy_reward(&tokens, truth, &v), 1.0);
        assert_eq!(accuracy_reward(&tokens, v.answer(0), &v), 0.0);
    }

    #[test]
    fn accuracy_does_not_require_format() {
        let v = vocab();
        let truth = v.answer(1);
        // Bare answer segment, no think scaffold: accuracy 1, format 0.
        let tokens = [ANSWER_OPEN, truth, ANSWER_CLOSE];
        assert_eq!(accuracy_reward(&tokens, truth, &v), 1.0);
        assert_eq!(format_reward(&tokens, &v), 0.0);
    }

    #[test]
    fn multi_token_or_empty_segments_score_zero() {
        let v = vocab();
        let truth = v.answer(1);
        let two = [ANSWER_OPEN, truth, truth, ANSWER_CLOSE];
        assert_eq!(accuracy_reward(&two, truth, &v), 0.0);
        let empty = [ANSWER_OPEN, ANSWER_CLOSE];
        assert_eq!(accuracy_reward(&empty, truth, &v), 0.0);
    }

    #[test]
    fn unterminated_segment_is_unparseable() {
        let v = vocab();
        let truth = v.answer(1);
        let tokens = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, truth];
        assert_eq!(accuracy_reward(&tokens, truth, &v), 0.0);
        assert_eq!(extract_answer(&tokens, &v), None);
    }

    #[test]
    fn extraction_uses_the_first_answer_segment() {
        let v = vocab();
        let (a, b) = (v.answer(0), v.answer(1));
        let tokens = [ANSWER_OPEN, a, ANSWER_CLOSE, ANSWER_OPEN, b, ANSWER_CLOSE];
        assert_eq!(extract_answer(&tokens, &v), Some(a));
        assert_eq!(accuracy_reward(&tokens, b, &v), 0.0);
    }

    #[test]
    fn equivalence_set_accepts_any_member() {
        let v = vocab();
        let correct = vec![v.answer(1), v.answer(2)];
        let tokens = [ANSWER_OPEN, v.answer(2), ANSWER_CLOSE];
        assert_eq!(accuracy_reward_any(&tokens, &correct, &v), 1.0);
        let tokens = [ANSWER_OPEN, v.answer(3), ANSWER_CLOSE];
        assert_eq!(accuracy_reward_any(&tokens, &correct, &v), 0.0);
    }

    // ---- combined_reward ------------------------------------------------------

    #[test]
    fn combination_covers_the_four_value_alphabet() {
        let cfg = RewardConfig::default();
        assert_eq!(combined_reward(0.0, 0.0, &cfg).unwrap(), 0.0);
        assert_eq!(combined_reward(0.0, 1.0, &cfg).unwrap(), 0.9);
        let format_only = combined_reward(1.0, 0.0, &cfg).unwrap();
        assert!((format_only - 0.1).abs() < 1e-15);
        // The load-bearing exactness: both components correct must give the
        // literal 1.0 the success indicator tests against.
        assert_eq!(combined_reward(1.0, 1.0, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn reward_one_iff_both_components_one() {
        // Holds for any beta strictly inside (0, 1), not just the default.
        for beta in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let cfg = RewardConfig {
                beta_r: beta,
                ..Default::default()
            };
            for (f, a) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)] {
                assert_ne!(
                    combined_reward(f, a, &cfg).unwrap(),
                    1.0,
                    "beta={beta} f={f} a={a}"
                );
            }
            assert_eq!(combined_reward(1.0, 1.0, &cfg).unwrap(), 1.0, "beta={beta}");
        }
    }

    #[test]
    fn combination_is_monotone_in_both_components() {
        let cfg = RewardConfig::default();
        let r00 = combined_reward(0.0, 0.0, &cfg).unwrap();
        let r10 = combined_reward(1.0, 0.0, &cfg).unwrap();
        let r01 = combined_reward(0.0, 1.0, &cfg).unwrap();
        let r11 = combined_reward(1.0, 1.0, &cfg).unwrap();
        assert!(r00 < r10 && r10 < r01 && r01 < r11);
    }

    #[test]
    fn non_binary_components_are_a_contract_violation() {
        let cfg = RewardConfig::default();
        assert_eq!(
            combined_reward(0.5, 1.0, &cfg),
            Err(RewardError::NonBinaryComponent { value: 0.5 })
        );
        assert!(combined_reward(1.0, f64::NAN, &cfg).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(RewardConfig {
            beta_r: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RewardConfig {
            beta_r: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RewardConfig::default().validate().is_ok());
    }

    // ---- score_group ----------------------------------------------------------

    #[test]
    fn scoring_sets_rewards_components_and_success() {
        use crate::policy_env::{sample_group, PolicyLayout, TabularPolicy, TaskInstance};
        let layout = PolicyLayout {
            vocab: vocab(),
            n_prompt_symbols: 2,
            context_order: 1,
            max_len: 8,
        };
        let policy = TabularPolicy::format_scaffold(layout).unwrap();
        let task = TaskInstance {
            prompt_id: 3,
            prompt: vec![1],
            ground_truth: layout.vocab.answer(2),
            correct_answers: vec![layout.vocab.answer(2)],
            difficulty: 0.75,
        };
        let mut group = sample_group(&policy, &task, 16, 11).unwrap();
        let cfg = RewardConfig::default();
        let rewards = score_group(&mut group, &cfg, &layout.vocab).unwrap();
        let comps = rewards.components().unwrap();
        for (traj, (r, c)) in group
            .trajectories
            .iter()
            .zip(rewards.values().iter().zip(comps))
        {
            assert_eq!(traj.reward, *r);
            assert_eq!(traj.success, *r == 1.0);
            // Scaffolded policy always satisfies the format rule.
            assert_eq!(c.format, 1.0);
            assert!(*r == 1.0 || (*r - 0.1).abs() < 1e-15);
        }
    }
}
