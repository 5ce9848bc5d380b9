//! Tabular autoregressive policy.
//!
//! The policy is a dense `(state, token)` logit table over contexts of the
//! last `context_order` symbols. Context symbols extend the generation
//! vocabulary with a padding symbol and a separate prompt alphabet, so
//! prompts can seed the context without ever being generable. Log-softmax,
//! sampling, and per-token log-probabilities are all exact, which is what
//! makes finite-difference gradient checks and exact KL possible downstream.

use super::vocab::{Vocab, ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};
use crate::types::TokenId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on the logit table size; keeps accidental `context_order`
/// blow-ups from allocating gigabytes.
pub const MAX_PARAMS: usize = 1 << 22;

/// Logit magnitude used for the deterministic rows of structured inits.
/// `exp(-50)` is ~2e-22: unreachable in any realistic sample count, yet the
/// row still normalizes exactly.
const SCAFFOLD_LOGIT: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("token {token} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfVocab { token: TokenId, vocab_size: usize },
    #[error("prompt symbol {symbol} is outside the prompt alphabet of size {alphabet}")]
    PromptSymbolOutOfRange { symbol: usize, alphabet: usize },
    #[error("layout needs {required} parameters, above the cap of {MAX_PARAMS}")]
    TableTooLarge { required: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("parameter vector has length {got}, layout needs {expected}")]
    ParamLengthMismatch { got: usize, expected: usize },
    #[error("policy produced a non-finite distribution at state {state}")]
    NonFiniteDistribution { state: usize },
}

/// Dimensions of the context/state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub vocab: Vocab,
    /// Size of the prompt symbol alphabet (context-only, never generated).
    pub n_prompt_symbols: usize,
    /// Markov order: how many trailing symbols form the state.
    pub context_order: usize,
    /// Generation length cap; sequences are cut here if the stop token
    /// never appears.
    pub max_len: usize,
}

impl PolicyLayout {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.vocab.n_answers == 0 {
            return Err(PolicyError::InvalidLayout("n_answers must be >= 1".into()));
        }
        if self.n_prompt_symbols == 0 {
            return Err(PolicyError::InvalidLayout(
                "n_prompt_symbols must be >= 1".into(),
            ));
        }
        if self.context_order == 0 {
            return Err(PolicyError::InvalidLayout(
                "context_order must be >= 1".into(),
            ));
        }
        if self.max_len == 0 {
            return Err(PolicyError::InvalidLayout("max_len must be >= 1".into()));
        }
        let states = self.checked_n_states().ok_or(PolicyError::TableTooLarge {
            required: usize::MAX,
        })?;
        let required = states
            .checked_mul(self.vocab.size())
            .ok_or(PolicyError::TableTooLarge {
                required: usize::MAX,
            })?;
        if required > MAX_PARAMS {
            return Err(PolicyError::TableTooLarge { required });
        }
        Ok(())
    }

    /// Context symbol alphabet: 1 padding symbol + prompts + tokens.
    pub fn ctx_symbols(&self) -> usize {
        1 + self.n_prompt_symbols + self.vocab.size()
    }

    fn checked_n_states(&self) -> Option<usize> {
        self.ctx_symbols()
            .checked_pow(u32::try_from(self.context_order).ok()?)
    }

    pub fn n_states(&self) -> usize {
        self.checked_n_states().expect("validated layout")
    }

    pub fn n_params(&self) -> usize {
        self.n_states() * self.vocab.size()
    }

    /// Context symbol for a prompt id.
    pub fn sym_prompt(&self, symbol: usize) -> Result<usize, PolicyError> {
        if symbol >= self.n_prompt_symbols {
            return Err(PolicyError::PromptSymbolOutOfRange {
                symbol,
                alphabet: self.n_prompt_symbols,
            });
        }
        Ok(1 + symbol)
    }

    /// Context symbol for a generated token.
    pub fn sym_token(&self, token: TokenId) -> Result<usize, PolicyError> {
        if token >= self.vocab.size() {
            return Err(PolicyError::TokenOutOfVocab {
                token,
                vocab_size: self.vocab.size(),
            });
        }
        Ok(1 + self.n_prompt_symbols + token)
    }

    /// Roll one context symbol into a state (the oldest symbol falls out).
    pub fn push_state(&self, state: usize, symbol: usize) -> usize {
        (state * self.ctx_symbols() + symbol) % self.n_states()
    }

    /// State after consuming the prompt, before the first generated token.
    pub fn start_state(&self, prompt: &[usize]) -> Result<usize, PolicyError> {
        let mut state = 0; // all-padding context
        for &p in prompt {
            state = self.push_state(state, self.sym_prompt(p)?);
        }
        Ok(state)
    }
}

/// How to initialize the logit table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyInit {
    /// All-zero logits: uniform over the vocabulary at every state.
    #[default]
    Uniform,
    /// Deterministic think/answer scaffold with a uniform answer slot.
    ///
    /// The marker path is pinned with saturated logits, so format reward is
    /// 1 for every sampled rollout and the only learnable decision is which
    /// answer token to emit. This is the "format held correct" regime used
    /// to study the answer channel in isolation.
    FormatScaffold,
}

/// Policy hyperparameters as they appear in the experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub n_think_tokens: usize,
    pub n_answer_tokens: usize,
    pub n_prompt_symbols: usize,
    pub context_order: usize,
    pub max_len: usize,
    pub init: PolicyInit,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            n_think_tokens: 2,
            n_answer_tokens: 4,
            n_prompt_symbols: 8,
            context_order: 1,
            max_len: 8,
            init: PolicyInit::Uniform,
        }
    }
}

impl PolicyConfig {
    pub fn layout(&self) -> PolicyLayout {
        PolicyLayout {
            vocab: Vocab {
                n_think: self.n_think_tokens,
                n_answers: self.n_answer_tokens,
            },
            n_prompt_symbols: self.n_prompt_symbols,
            context_order: self.context_order,
            max_len: self.max_len,
        }
    }

    pub fn build(&self) -> Result<TabularPolicy, PolicyError> {
        let layout = self.layout();
        match self.init {
            PolicyInit::Uniform => TabularPolicy::uniform(layout),
            PolicyInit::FormatScaffold => TabularPolicy::format_scaffold(layout),
        }
    }
}

/// Dense `(state, token)` logit table; rows are softmax-normalized on use.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    layout: PolicyLayout,
    logits: Vec<f64>,
}

impl TabularPolicy {
    /// Uniform policy: all logits zero.
    pub fn uniform(layout: PolicyLayout) -> Result<Self, PolicyError> {
        layout.validate()?;
        let logits = vec![0.0; layout.n_params()];
        Ok(Self { layout, logits })
    }

    /// Scaffolded policy: markers deterministic, answer slot uniform.
    ///
    /// Rows are assigned by the most recent context symbol, so the scaffold
    /// is well formed for any context order:
    /// padding/prompt -> think-open, think-open/filler -> think-close,
    /// think-close -> answer-open, answer-open -> uniform answers,
    /// answer token -> answer-close.
    pub fn format_scaffold(layout: PolicyLayout) -> Result<Self, PolicyError> {
        layout.validate()?;
        let vocab = layout.vocab;
        let v = vocab.size();
        let base = layout.ctx_symbols();
        let mut logits = vec![0.0; layout.n_params()];
        for state in 0..layout.n_states() {
            let last = state % base;
            let row = &mut logits[state * v..(state + 1) * v];
            let one_hot = |row: &mut [f64], tok: TokenId| {
                for (t, l) in row.iter_mut().enumerate() {
                    *l = if t == tok {
                        SCAFFOLD_LOGIT
                    } else {
                        -SCAFFOLD_LOGIT
                    };
                }
            };
            if last <= layout.n_prompt_symbols {
                // Padding or prompt symbol: open the think segment.
                one_hot(row, THINK_OPEN);
                continue;
            }
            let tok = last - 1 - layout.n_prompt_symbols;
            if tok == THINK_OPEN || vocab.think_tokens().contains(&tok) {
                one_hot(row, THINK_CLOSE);
            } else if tok == THINK_CLOSE {
                one_hot(row, ANSWER_OPEN);
            } else if tok == ANSWER_OPEN {
                for (t, l) in row.iter_mut().enumerate() {
                    *l = if vocab.is_answer(t) {
                        0.0
                    } else {
                        -SCAFFOLD_LOGIT
                    };
                }
            } else {
                // Answer token or a stray answer-close: close the segment.
                one_hot(row, ANSWER_CLOSE);
            }
        }
        Ok(Self { layout, logits })
    }

    /// Random logits, `Normal(0, scale)`, for gradient-check fixtures.
    pub fn random(layout: PolicyLayout, seed: u64, scale: f64) -> Result<Self, PolicyError> {
        layout.validate()?;
        let mut rng = crate::rng::seeded_rng(seed);
        let normal = Normal::new(0.0, scale)
            .map_err(|e| PolicyError::InvalidLayout(format!("bad logit scale: {e}")))?;
        let logits = (0..layout.n_params())
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(Self { layout, logits })
    }

    /// Rebuild from a raw parameter vector (the policy-file decoder path).
    pub fn from_params(layout: PolicyLayout, logits: Vec<f64>) -> Result<Self, PolicyError> {
        layout.validate()?;
        if logits.len() != layout.n_params() {
            return Err(PolicyError::ParamLengthMismatch {
                got: logits.len(),
                expected: layout.n_params(),
            });
        }
        Ok(Self { layout, logits })
    }

    pub fn layout(&self) -> &PolicyLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Flat parameter index of `(state, token)`.
    pub fn param_index(&self, state: usize, token: TokenId) -> usize {
        state * self.layout.vocab.size() + token
    }

    pub fn logit(&self, state: usize, token: TokenId) -> f64 {
        self.logits[self.param_index(state, token)]
    }

    fn row(&self, state: usize) -> &[f64] {
        let v = self.layout.vocab.size();
        &self.logits[state * v..(state + 1) * v]
    }

    /// Exact log-softmax over one state row (max-shifted for stability).
    pub fn log_softmax_row(&self, state: usize) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        row.iter().map(|z| z - lse).collect()
    }

    /// Probabilities over one state row at the given sampling temperature.
    pub fn probs_row(&self, state: usize, temperature: f64) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = row
            .iter()
            .map(|z| ((z - max) / temperature).exp())
            .collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        probs
    }

    /// Log-probability of one token at one state (temperature 1).
    pub fn token_logprob(&self, state: usize, token: TokenId) -> Result<f64, PolicyError> {
        if token >= self.layout.vocab.size() {
            return Err(PolicyError::TokenOutOfVocab {
                token,
                vocab_size: self.layout.vocab.size(),
            });
        }
        Ok(self.log_softmax_row(state)[token])
    }

    /// Sample one token at `state`; errors if the row is not a distribution
    /// (non-finite logits), rather than silently picking something.
    pub fn sample_token(
        &self,
        state: usize,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<TokenId, PolicyError> {
        let probs = self.probs_row(state, temperature);
        let sum: f64 = probs.iter().sum();
        if !sum.is_finite() {
            return Err(PolicyError::NonFiniteDistribution { state });
        }
        let u: f64 = rng.random::<f64>();
        let mut cumulative = 0.0;
        for (token, p) in probs.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                return Ok(token);
            }
        }
        // Float-sum shortfall: the draw landed in the last sliver.
        Ok(probs.len() - 1)
    }
}

/// Per-token log-probabilities of a token sequence under `policy`,
/// conditioned on `prompt` (prompt symbols seed the context window).
///
/// The values are exact log-softmax outputs; their sum is the log of the
/// sequence probability at temperature 1.
///
/// # Edge cases
/// - a token outside the vocabulary is a contract violation error;
/// - an empty sequence yields an empty vector.
pub fn policy_logprob(
    policy: &TabularPolicy,
    prompt: &[usize],
    tokens: &[TokenId],
) -> Result<Vec<f64>, PolicyError> {
    let layout = policy.layout();
    let mut state = layout.start_state(prompt)?;
    let mut out = Vec::with_capacity(tokens.len());
    for &token in tokens {
        out.push(policy.token_logprob(state, token)?);
        state = layout.push_state(state, layout.sym_token(token)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_layout() -> PolicyLayout {
        PolicyLayout {
            vocab: Vocab {
                n_think: 2,
                n_answers: 2,
            },
            n_prompt_symbols: 2,
            context_order: 1,
            max_len: 8,
        }
    }

    #[test]
    fn softmax_rows_normalize() {
        let policy = TabularPolicy::random(small_layout(), 11, 2.0).unwrap();
        for state in 0..policy.layout().n_states() {
            let lp = policy.log_softmax_row(state);
            let sum: f64 = lp.iter().map(|l| l.exp()).sum();
            assert!(
                (sum - 1.0).abs() < 1e-12,
                "softmax row {state} sums to {sum}, expected 1 within 1e-12"
            );
        }
    }

    #[test]
    fn answerless_layouts_are_rejected() {
        // An answerless vocabulary cannot host a task.
        let layout = PolicyLayout {
            vocab: Vocab {
                n_think: 0,
                n_answers: 0,
            },
            n_prompt_symbols: 1,
            context_order: 1,
            max_len: 8,
        };
        assert!(TabularPolicy::uniform(layout).is_err());
    }

    #[test]
    fn uniform_policy_logprob_is_log_inverse_vocab() {
        let layout = small_layout();
        let policy = TabularPolicy::uniform(layout).unwrap();
        let v = layout.vocab.size() as f64;
        let lps = policy_logprob(&policy, &[0], &[THINK_OPEN, THINK_CLOSE, ANSWER_OPEN]).unwrap();
        assert_eq!(lps.len(), 3);
        for lp in lps {
            assert!(
                (lp - (1.0 / v).ln()).abs() < 1e-12,
                "uniform logprob {lp} != ln(1/{v})"
            );
        }
    }

    #[test]
    fn logprob_rejects_out_of_vocab_tokens() {
        let policy = TabularPolicy::uniform(small_layout()).unwrap();
        let err = policy_logprob(&policy, &[0], &[99]).unwrap_err();
        assert_eq!(
            err,
            PolicyError::TokenOutOfVocab {
                token: 99,
                vocab_size: 8
            }
        );
    }

    #[test]
    fn logprob_rejects_out_of_range_prompt_symbols() {
        let policy = TabularPolicy::uniform(small_layout()).unwrap();
        let err = policy_logprob(&policy, &[5], &[THINK_OPEN]).unwrap_err();
        assert!(matches!(
            err,
            PolicyError::PromptSymbolOutOfRange { symbol: 5, .. }
        ));
    }

    #[test]
    fn state_rolls_through_the_context_window() {
        let mut layout = small_layout();
        layout.context_order = 2;
        let base = layout.ctx_symbols();
        let s0 = layout.start_state(&[1]).unwrap();
        assert_eq!(s0, 2); // (pad, prompt 1) = 0 * base + 2
        let s1 = layout.push_state(s0, layout.sym_token(THINK_OPEN).unwrap());
        assert_eq!(s1, 2 * base + 3);
        // Third push drops the prompt symbol from the window.
        let s2 = layout.push_state(s1, layout.sym_token(THINK_CLOSE).unwrap());
        assert_eq!(s2, 3 * base + 4);
    }

    #[test]
    fn scaffold_emits_the_template_deterministically() {
        let layout = small_layout();
        let policy = TabularPolicy::format_scaffold(layout).unwrap();
        let mut rng = crate::rng::seeded_rng(3);
        let mut state = layout.start_state(&[1]).unwrap();
        let mut tokens = Vec::new();
        for _ in 0..layout.max_len {
            let t = policy.sample_token(state, 1.0, &mut rng).unwrap();
            tokens.push(t);
            state = layout.push_state(state, layout.sym_token(t).unwrap());
            if t == ANSWER_CLOSE {
                break;
            }
        }
        assert_eq!(tokens.len(), 5);
        assert_eq!(
            &tokens[..4],
            &[THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, tokens[3]]
        );
        assert!(layout.vocab.is_answer(tokens[3]));
        assert_eq!(tokens[4], ANSWER_CLOSE);
    }

    #[test]
    fn layout_cap_rejects_huge_tables() {
        let layout = PolicyLayout {
            vocab: Vocab {
                n_think: 40,
                n_answers: 40,
            },
            n_prompt_symbols: 40,
            context_order: 4,
            max_len: 8,
        };
        assert!(matches!(
            layout.validate(),
            Err(PolicyError::TableTooLarge { .. })
        ));
    }

    #[test]
    fn config_defaults_build() {
        let cfg = PolicyConfig::default();
        let policy = cfg.build().unwrap();
        assert_eq!(policy.layout().vocab.size(), 4 + 2 + 4);
        assert_eq!(policy.layout().n_states(), 1 + 8 + 10);
    }
}
