//! Reconstruction loss over one trajectory fragment.

use crate::autodiff::{GraphError, NodeId};
use crate::model::{ActionKind, GenHeads, ModelConfig};
use crate::traj::{Actions, Trajectory};
use crate::{Graph, Tensor};

fn invalid(msg: impl Into<String>) -> GraphError {
    GraphError::Invalid {
        op: "supervised_loss",
        msg: msg.into(),
    }
}

/// Reconstruction error of the generator heads against the fragment that
/// produced them. Continuous targets use squared error averaged over vector
/// dims; discrete actions use cross-entropy. Both are summed over steps, so
/// the loss grows with fragment length.
///
/// `frag` must carry its trailing state (the final state prediction's
/// target), and `heads` must come from the fragment's body — `frag.steps()`
/// prediction steps with no trailing-state row.
pub fn supervised_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    heads: &GenHeads,
    frag: &Trajectory,
) -> Result<NodeId, GraphError> {
    let n = frag.steps();
    if n == 0 {
        return Err(invalid("fragment has no steps"));
    }
    if !frag.has_trailing_state() {
        return Err(invalid("fragment is missing its trailing state"));
    }
    if heads.steps != n || heads.has_trailing {
        return Err(invalid(format!(
            "heads cover {} steps (trailing: {}), fragment has {}",
            heads.steps, heads.has_trailing, n
        )));
    }

    let actions = heads.actions.ok_or_else(|| invalid("missing action head"))?;
    let action_term = match (&frag.actions, cfg.action_kind) {
        (Actions::Continuous(rows), ActionKind::Continuous { dim }) => {
            let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
            let t = Tensor::from_vec(&[n, dim], flat).map_err(|e| invalid(e.to_string()))?;
            let target = g.constant(t);
            let m = g.mse(actions, target)?;
            g.scale(m, n as f64)?
        }
        (Actions::Discrete(ks), ActionKind::Discrete { .. }) => g.cross_entropy(actions, ks)?,
        _ => return Err(invalid("fragment action type does not match the model")),
    };

    let rewards = heads.rewards.ok_or_else(|| invalid("missing reward head"))?;
    let rt = Tensor::from_vec(&[n, 1], frag.rewards.clone()).map_err(|e| invalid(e.to_string()))?;
    let reward_target = g.constant(rt);
    let rm = g.mse(rewards, reward_target)?;
    let reward_term = g.scale(rm, n as f64)?;

    let flat_states: Vec<f64> = frag
        .states
        .iter()
        .flat_map(|s| s.iter().copied())
        .collect();
    let st = Tensor::from_vec(&[n + 1, cfg.state_dim], flat_states)
        .map_err(|e| invalid(e.to_string()))?;
    let state_target = g.constant(st);
    let sm = g.mse(heads.states, state_target)?;
    let state_term = g.scale(sm, (n + 1) as f64)?;

    let ar = g.add(action_term, reward_term)?;
    g.add(ar, state_term)
}
