//! Deployment on an unseen task: act from the first step, feeding finished
//! episodes back in as context for the next ones.

use std::collections::VecDeque;

use super::PipelineError;
use crate::env::{EnvSpec, Episode, HORIZON};
use crate::eval::rollout_fixed;
use crate::model::{adaptor_apply, encode, ActionKind, ModelBundle};
use crate::rng::RngStream;
use crate::traj::Trajectory;

#[derive(Debug, Clone)]
pub struct MetaTestConfig {
    /// Consecutive episodes on the task.
    pub episodes: usize,
    /// Steps taken from the front of a buffered episode as context.
    pub ctx_len: usize,
    /// How many past episodes stay available as context.
    pub buffer_cap: usize,
    pub seed: u64,
}

impl Default for MetaTestConfig {
    fn default() -> Self {
        MetaTestConfig {
            episodes: 5,
            ctx_len: 16,
            buffer_cap: 8,
            seed: 0,
        }
    }
}

/// Run consecutive episodes on `spec`, one fixed prompt per episode. The
/// first episode rides the learned empty-input prompt — the current episode
/// never feeds the encoder, so nothing about the task reaches the prompt
/// until an episode has actually finished. Later episodes encode the opening
/// of a buffered earlier episode — the part where behavior from the shared
/// start still tells tasks apart, before walls or absorbing states flatten
/// it — so behavior can adapt to the task without any weight update.
pub fn meta_test(
    bundle: &ModelBundle,
    spec: &EnvSpec,
    cfg: &MetaTestConfig,
) -> Result<Vec<Episode>, PipelineError> {
    if cfg.episodes == 0 {
        return Err(PipelineError::Config("zero deployment episodes".into()));
    }
    if cfg.ctx_len == 0 || cfg.ctx_len > HORIZON {
        return Err(PipelineError::Config(format!(
            "context length must be in 1..={HORIZON}"
        )));
    }
    let blank = match spec.action_kind() {
        ActionKind::Continuous { .. } => Trajectory::empty_continuous(),
        ActionKind::Discrete { .. } => Trajectory::empty_discrete(),
    };
    let mut ctx_rng = RngStream::new(cfg.seed, 3);
    let mut buffer: VecDeque<Trajectory> = VecDeque::new();
    let mut out = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let z = if buffer.is_empty() {
            encode(bundle, None, &blank)?
        } else {
            let which = ctx_rng.below(buffer.len() as u64) as usize;
            let past = &buffer[which];
            let len = cfg.ctx_len.min(past.steps());
            let frag = past.fragment(0, len);
            encode(bundle, Some(&frag), &blank)?
        };
        let prompt = adaptor_apply(bundle, &z)?;
        let episode_seed = RngStream::new(cfg.seed, 100 + e as u64).next_u64();
        let ep = rollout_fixed(bundle, spec, &prompt, episode_seed)?;
        buffer.push_back(ep.traj.clone());
        if buffer.len() > cfg.buffer_cap {
            buffer.pop_front();
        }
        out.push(ep);
    }
    Ok(out)
}
