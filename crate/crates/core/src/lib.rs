//! Desk-scale laboratory for group-relative policy optimization.
//!
//! The crate implements a family of group-normalized advantage estimators
//! (GRPO, Dr. GRPO, GPG, TreeRPO, APD, and the certainty-mixed MAPO), a
//! tabular autoregressive policy over synthetic verifiable-reward tasks, the
//! clipped surrogate objective with exact analytic gradients and exact
//! reference KL, a small group-relative trainer, and an analysis harness
//! that reproduces the advantage pathologies motivating the mixed estimator
//! and checks its gradient-magnitude theory against measured gradients.
//!
//! Everything is double precision and deterministic: sampling is driven by a
//! seed hierarchy (run -> step -> group), so any group is replayable in
//! isolation and repeated runs are bitwise identical.

pub mod advantage;
pub mod analysis;
pub mod config;
pub mod io;
pub mod objective;
pub mod policy_env;
pub mod rewards;
pub mod rng;
pub mod trainer;
pub mod types;

pub use advantage::{
    advantage_apd, advantage_baseline, advantage_grpo, advantage_mapo, estimate, EstimatorSpec,
};
pub use policy_env::{
    make_curriculum, policy_logprob, sample_group, DifficultyProfile, PolicyConfig, PolicyInit,
    PolicyLayout, RolloutGroup, TabularPolicy, TaskInstance, Vocab,
};
pub use rewards::{accuracy_reward, combined_reward, format_reward, RewardConfig};
pub use types::{
    group_stats, AdvantageVector, EstimatorKind, GroupStats, RewardVector, Trajectory,
};
