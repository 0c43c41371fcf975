//! Greedy rollouts of the generator in a live environment.

use super::EvalError;
use crate::env::{Dataset, EnvSpec, Episode, HORIZON};
use crate::model::{encode, greedy_action, ActionKind, ModelBundle, ModelConfig};
use crate::parallel::parallel_map;
use crate::rng::RngStream;
use crate::traj::{StepAction, Trajectory};
use crate::Tensor;

pub(crate) fn check_compat(cfg: &ModelConfig, spec: &EnvSpec) -> Result<(), EvalError> {
    spec.validate()?;
    if cfg.state_dim != spec.state_dim() || cfg.action_kind != spec.action_kind() {
        return Err(EvalError::Mismatch(format!(
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

/// Continuous actions are clamped to the environment's bounds; a non-finite
/// action is a model failure worth surfacing, not clamping.
fn clamp_action(spec: &EnvSpec, action: &mut StepAction) -> Result<(), EvalError> {
    if let StepAction::Continuous(v) = action {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EvalError::NonFinite(format!("policy produced {v:?}")));
        }
        if let Some((lo, hi)) = spec.action_bounds() {
            for x in v.iter_mut() {
                *x = x.clamp(lo, hi);
            }
        }
    }
    Ok(())
}

fn empty_history(spec: &EnvSpec) -> Trajectory {
    match spec.action_kind() {
        ActionKind::Continuous { .. } => Trajectory::empty_continuous(),
        ActionKind::Discrete { .. } => Trajectory::empty_discrete(),
    }
}

/// Play one episode acting greedily under a fixed prompt. The environment
/// draws from the same stream as data collection, so rollouts are exactly
/// reproducible from their seed.
pub fn rollout_fixed(
    bundle: &ModelBundle,
    spec: &EnvSpec,
    prompt: &Tensor,
    episode_seed: u64,
) -> Result<Episode, EvalError> {
    check_compat(&bundle.cfg, spec)?;
    rollout_loop(bundle, spec, episode_seed, |_, _| Ok(prompt.clone()))
}

fn rollout_loop(
    bundle: &ModelBundle,
    spec: &EnvSpec,
    episode_seed: u64,
    mut prompt_for: impl FnMut(&ModelBundle, &Trajectory) -> Result<Tensor, EvalError>,
) -> Result<Episode, EvalError> {
    let mut env_rng = RngStream::new(episode_seed, 1);
    let mut traj = empty_history(spec);
    let mut state = spec.initial_state(&mut env_rng);
    traj.states.push(state.clone());
    for _ in 0..HORIZON {
        let prompt = prompt_for(bundle, &traj)?;
        let mut action = greedy_action(bundle, &prompt, &traj)?;
        clamp_action(spec, &mut action)?;
        let (next, reward) = spec.step(&state, &action, &mut env_rng)?;
        traj.actions.push(action);
        traj.rewards.push(reward);
        traj.states.push(next.clone());
        state = next;
    }
    Ok(Episode {
        seed: episode_seed,
        traj,
    })
}

/// Encode `count` episodes sampled without replacement into prompts.
pub fn episode_prompts(
    bundle: &ModelBundle,
    ds: &Dataset,
    count: usize,
    seed: u64,
) -> Result<Vec<Tensor>, EvalError> {
    check_compat(&bundle.cfg, &ds.manifest.env)?;
    if count == 0 || ds.episodes.is_empty() {
        return Err(EvalError::Mismatch("nothing to encode".into()));
    }
    let mut idx: Vec<usize> = (0..ds.episodes.len()).collect();
    RngStream::new(seed, 4).shuffle(&mut idx);
    idx.truncate(count.min(ds.episodes.len()));
    let picked: Vec<&Trajectory> = idx.iter().map(|&i| &ds.episodes[i].traj).collect();
    let encoded = parallel_map(&picked, |t| encode(bundle, None, t));
    encoded
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(Into::into)
}

/// Roll out each prompt once and return the episode returns. Episode seeds
/// derive from `seed` by index, so two prompt lists face identical
/// environment draws.
pub fn evaluate_fixed_prompts(
    bundle: &ModelBundle,
    spec: &EnvSpec,
    prompts: &[Tensor],
    seed: u64,
) -> Result<Vec<f64>, EvalError> {
    check_compat(&bundle.cfg, spec)?;
    let indexed: Vec<(usize, &Tensor)> = prompts.iter().enumerate().collect();
    let runs = parallel_map(&indexed, |&(i, z)| {
        let episode_seed = RngStream::new(seed, i as u64).next_u64();
        rollout_fixed(bundle, spec, z, episode_seed).map(|e| e.traj.ret())
    });
    runs.into_iter().collect()
}
