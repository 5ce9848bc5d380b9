//! Generation vocabulary for the think/answer tasks.
//!
//! Fixed layout: four structural markers first, then the think filler
//! tokens, then the answer sub-vocabulary. Only the relative sizes are
//! configurable; marker ids are compile-time constants so reward rules can
//! match on them cheaply.

use crate::types::TokenId;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Opens the think segment.
pub const THINK_OPEN: TokenId = 0;
/// Closes the think segment.
pub const THINK_CLOSE: TokenId = 1;
/// Opens the answer segment.
pub const ANSWER_OPEN: TokenId = 2;
/// Closes the answer segment; also the stop token for generation.
pub const ANSWER_CLOSE: TokenId = 3;
/// Number of structural markers at the front of the vocabulary.
pub const N_MARKERS: usize = 4;

/// Vocabulary dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    /// Think filler tokens (free "reasoning" content).
    pub n_think: usize,
    /// Answer sub-vocabulary size `m`; the space accuracy is judged over.
    pub n_answers: usize,
}

impl Vocab {
    pub fn size(&self) -> usize {
        N_MARKERS + self.n_think + self.n_answers
    }

    pub fn think_tokens(&self) -> Range<TokenId> {
        N_MARKERS..N_MARKERS + self.n_think
    }

    pub fn answer_tokens(&self) -> Range<TokenId> {
        N_MARKERS + self.n_think..self.size()
    }

    pub fn is_answer(&self, token: TokenId) -> bool {
        self.answer_tokens().contains(&token)
    }

    /// The `i`-th answer token.
    ///
    /// # Panics
    /// If `i >= n_answers`.
    pub fn answer(&self, i: usize) -> TokenId {
        assert!(
            i < self.n_answers,
            "answer index {i} out of {}",
            self.n_answers
        );
        N_MARKERS + self.n_think + i
    }
}
