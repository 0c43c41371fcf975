//! Rollout evaluation: greedy policies driven by prompts, score
//! normalization against scripted play, a behavior-cloning baseline, and
//! report tables.

mod bc;
mod report;
mod rollout;

pub use bc::{bc_rollout, train_bc, BcConfig, BcPolicy};
pub use report::{
    eval_csv, normalized_score, prompt_separation, return_stats, EvalRow, ReturnStats, Separation,
    EVAL_CSV_HEADER,
};
pub use rollout::{episode_prompts, evaluate_fixed_prompts, rollout_fixed};

use crate::autodiff::GraphError;
use crate::env::EnvError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("reference returns coincide; the normalized scale is undefined")]
    DegenerateReferences,
}
