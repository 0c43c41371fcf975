//! Training stages: representation learning over offline trajectories,
//! prompt-space improvement through the adaptor, and multi-task training
//! with context-conditioned deployment.

mod metatest;
mod metrics;
mod train;
mod tune;

pub use metatest::{meta_test, MetaTestConfig};
pub use metrics::{metrics_csv, strip_wall_seconds, MetricsRow, METRICS_CSV_HEADER};
pub use train::{meta_train, pretrain_representation, TrainConfig};
pub use tune::{improvement_tune, TuneConfig, TuneMode};

use crate::autodiff::GraphError;
use crate::env::{EnvError, EnvSpec};
use crate::eval::EvalError;
use crate::model::ModelConfig;
use crate::optim::OptimError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("{0}")]
    Config(String),
    #[error("loss went non-finite: {stage}, epoch {epoch}, batch {batch}")]
    NonFinite {
        stage: &'static str,
        epoch: usize,
        batch: usize,
    },
}

pub(crate) fn check_compat(cfg: &ModelConfig, spec: &EnvSpec) -> Result<(), PipelineError> {
    spec.validate()?;
    if cfg.state_dim != spec.state_dim() || cfg.action_kind != spec.action_kind() {
        return Err(PipelineError::Config(format!(
            "model takes {}-dim states with {:?} actions; {} has {}-dim states with {:?}",
            cfg.state_dim,
            cfg.action_kind,
            spec.family.name(),
            spec.state_dim(),
            spec.action_kind()
        )));
    }
    Ok(())
}
