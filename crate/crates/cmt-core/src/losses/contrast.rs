//! Contrastive machinery: the InfoNCE objective over prompt similarities and
//! the pairing rules that pick positives and negatives.

use crate::autodiff::{GraphError, NodeId};
use crate::rng::RngStream;
use crate::traj::Trajectory;
use crate::Graph;

fn invalid(msg: impl Into<String>) -> GraphError {
    GraphError::Invalid {
        op: "info_nce",
        msg: msg.into(),
    }
}

/// InfoNCE: cosine similarities between `anchor` and each candidate form one
/// row of logits, scaled by `1/alpha`, and the cross-entropy against the
/// positive's index is the loss. With K identical candidates this is exactly
/// `ln K`.
pub fn info_nce(
    g: &mut Graph,
    anchor: NodeId,
    candidates: &[NodeId],
    positive: usize,
    alpha: f64,
) -> Result<NodeId, GraphError> {
    if candidates.is_empty() {
        return Err(invalid("no candidates"));
    }
    if positive >= candidates.len() {
        return Err(invalid(format!(
            "positive index {positive} out of {} candidates",
            candidates.len()
        )));
    }
    if !(alpha > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {alpha}")));
    }
    let mut sims = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let s = g.cosine_sim(anchor, c)?;
        let cell = g.reshape(s, &[1, 1])?;
        sims.push(cell);
    }
    let row = g.concat(&sims, 1)?;
    let logits = g.scale(row, 1.0 / alpha)?;
    g.cross_entropy(logits, &[positive])
}

/// Two non-overlapping fragments of the same episode, each `frag_len` steps
/// (shorter when the episode cannot fit two), in random order. `None` if the
/// episode has fewer than two steps or lacks its trailing state.
pub fn disjoint_fragments(
    traj: &Trajectory,
    frag_len: usize,
    rng: &mut RngStream,
) -> Option<(Trajectory, Trajectory)> {
    let n = traj.steps();
    if n < 2 || !traj.has_trailing_state() {
        return None;
    }
    let l = frag_len.clamp(1, n / 2);
    let a = rng.below((n - 2 * l + 1) as u64) as usize;
    let b_lo = a + l;
    let b = b_lo + rng.below((n - l - b_lo + 1) as u64) as usize;
    let first = traj.fragment(a, l);
    let second = traj.fragment(b, l);
    Some(if rng.chance(0.5) {
        (second, first)
    } else {
        (first, second)
    })
}

/// Candidate subset for the return-similarity contrast: the positive is the
/// candidate whose return is closest to the anchor's within `margin`
/// (earliest wins ties); negatives are all candidates farther than `margin`.
/// Candidates inside the margin that are not the positive are ambiguous and
/// dropped. `None` when there is no positive or no negative.
///
/// Returns the kept candidate indices (original order) and the positive's
/// position within them.
pub fn return_contrast_sets(
    anchor_return: f64,
    candidate_returns: &[f64],
    margin: f64,
) -> Option<(Vec<usize>, usize)> {
    let mut pos: Option<usize> = None;
    for (i, &r) in candidate_returns.iter().enumerate() {
        let d = (r - anchor_return).abs();
        if d <= margin
            && pos.is_none_or(|p| d < (candidate_returns[p] - anchor_return).abs())
        {
            pos = Some(i);
        }
    }
    let pos = pos?;
    let mut kept = Vec::new();
    let mut pos_in_kept = 0;
    for (i, &r) in candidate_returns.iter().enumerate() {
        if i == pos {
            pos_in_kept = kept.len();
            kept.push(i);
        } else if (r - anchor_return).abs() > margin {
            kept.push(i);
        }
    }
    if kept.len() < 2 {
        return None;
    }
    Some((kept, pos_in_kept))
}

/// Candidate subset for the task-identity contrast: the positive is a
/// uniformly drawn same-task candidate, negatives are all other-task
/// candidates, and remaining same-task candidates are dropped. `None` when
/// either side is empty.
pub fn task_contrast_sets(
    anchor_task: usize,
    candidate_tasks: &[usize],
    rng: &mut RngStream,
) -> Option<(Vec<usize>, usize)> {
    let same: Vec<usize> = candidate_tasks
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t == anchor_task)
        .map(|(i, _)| i)
        .collect();
    if same.is_empty() {
        return None;
    }
    let pos = same[rng.below(same.len() as u64) as usize];
    let mut kept = Vec::new();
    let mut pos_in_kept = 0;
    for (i, &t) in candidate_tasks.iter().enumerate() {
        if i == pos {
            pos_in_kept = kept.len();
            kept.push(i);
        } else if t != anchor_task {
            kept.push(i);
        }
    }
    if kept.len() < 2 {
        return None;
    }
    Some((kept, pos_in_kept))
}
