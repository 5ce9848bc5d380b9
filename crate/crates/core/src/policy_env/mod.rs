//! Synthetic task environment and the tabular policy that acts in it.
//!
//! Rollouts are short token sequences with a think segment followed by a
//! single answer segment. Tasks differ only in which answer tokens count as
//! correct, so the base success rate of a uniform policy is known in closed
//! form and curricula can place tasks anywhere on the certainty spectrum.

mod policy;
mod rollout;
mod task;
mod vocab;

pub use policy::{
    policy_logprob, PolicyConfig, PolicyError, PolicyInit, PolicyLayout, TabularPolicy, MAX_PARAMS,
};
pub use rollout::{
    collect_visits, sample_group, sample_trajectory, RolloutGroup, SampleError, StateVisits,
};
pub use task::{
    curriculum_from_json, curriculum_to_json, make_curriculum, split_curriculum, CurriculumError,
    DifficultyProfile, TaskInstance, CURRICULUM_FORMAT_VERSION,
};
pub use vocab::{Vocab, ANSWER_CLOSE, ANSWER_OPEN, N_MARKERS, THINK_CLOSE, THINK_OPEN};
