//! Verification harness for the estimator family's theory and diagnostics.
//!
//! Four instruments:
//! - [`rho_closed_form`] / [`empirical_gradient_ratio`] / [`rho_case_sweep`]:
//!   the closed-form MAPO-to-GRPO gradient-magnitude law under binary
//!   rewards, checked against gradients actually measured on rollouts;
//! - [`pathology_report`]: the reversion and mirror failure modes of
//!   pure z-score advantages on four fixed reward batches, under all six
//!   estimators;
//! - [`certainty_spectrum`]: the distribution of per-group success counts a
//!   policy induces on a curriculum (the quantity the mix weight reacts to);
//! - [`run_verify_checks`]: the self-test suite behind the `verify`
//!   command, one pass/fail result per claim.

mod checks;
mod pathology;
mod ratio;
mod spectrum;

pub use checks::{run_verify_checks, verify_ratio_report, CheckResult, StatsTamper};
pub use pathology::{pathology_report, PathologyReport, PathologyRow};
pub use ratio::{empirical_gradient_ratio, rho_case_sweep, rho_closed_form, RatioReport, RatioRow};
pub use spectrum::{certainty_spectrum, SpectrumReport, TaskSpectrum};

use crate::objective::ObjectiveError;
use crate::policy_env::{CurriculumError, PolicyError, SampleError};
use crate::rewards::RewardError;
use crate::types::GroupError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("success fraction p = {0} lies outside the open interval (0, 1)")]
    OutOfDomain(f64),
    #[error("degenerate group: {n} successes of {g} makes the z-score gradient vanish")]
    DegenerateGroup { n: usize, g: usize },
    #[error("analysis config invalid: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
}
