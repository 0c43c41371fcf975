//! The representation-stage objective: reconstruction plus contrastive
//! terms, built over a whole batch in one graph.

use crate::autodiff::{GraphError, NodeId};
use crate::losses::contrast::{
    disjoint_fragments, info_nce, return_contrast_sets, task_contrast_sets,
};
use crate::losses::supervised::supervised_loss;
use crate::model::{encoder_tokens, generator_tokens, Bound, ModelConfig};
use crate::model::{encode_graph, generator_heads};
use crate::rng::RngStream;
use crate::traj::{Actions, Trajectory};
use crate::Graph;

fn invalid(msg: impl Into<String>) -> GraphError {
    GraphError::Invalid {
        op: "pretrain_loss",
        msg: msg.into(),
    }
}

/// One episode's contribution to a batch.
pub struct PretrainItem<'a> {
    /// Stable episode identity. Fragment sampling derives its randomness
    /// from this, and the batch is processed in key order, so the loss is
    /// bit-identical under any reordering of `items`.
    pub key: u64,
    /// Full episode, trailing state included.
    pub episode: &'a Trajectory,
    /// Optional context shown to the encoder alongside each fragment.
    pub ctx: Option<&'a Trajectory>,
    /// Hide the reconstructed fragment from the encoder: its prompt is read
    /// off the context alone, while the fragment stays the reconstruction
    /// target. Deployment hands the encoder nothing but a context fragment,
    /// so training must cover that view. Requires `ctx`. Such items skip the
    /// return contrast — a context-only prompt cannot know the hidden
    /// fragment's return.
    pub ctx_only: bool,
    /// Task identity for the task-level contrast; either every item has one
    /// or none does.
    pub task: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ContrastKnobs {
    /// Weight of the contrastive terms against reconstruction.
    pub gamma: f64,
    /// InfoNCE temperature.
    pub alpha: f64,
    /// Steps per sampled fragment.
    pub frag_len: usize,
    /// Return distance at or under which two fragments count as similar.
    pub return_margin: f64,
    /// Epoch-level sampling seed; combined with each item key.
    pub seed: u64,
}

impl Default for ContrastKnobs {
    fn default() -> Self {
        ContrastKnobs {
            gamma: 0.1,
            alpha: 0.2,
            frag_len: 16,
            return_margin: 0.0,
            seed: 0,
        }
    }
}

/// Handles to the composed loss and its pieces (for metrics reporting).
#[derive(Debug, Clone, Copy)]
pub struct PretrainParts {
    pub total: NodeId,
    pub l1: NodeId,
    pub l2_traj: NodeId,
    pub l2_return: NodeId,
    /// Present only when the batch carries task labels.
    pub l2_task: Option<NodeId>,
}

/// Mean of `terms`, or a zero constant when empty.
fn mean_or_zero(g: &mut Graph, terms: &[NodeId]) -> Result<NodeId, GraphError> {
    if terms.is_empty() {
        return Ok(g.scalar_const(0.0));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / terms.len() as f64)
}

/// Build the full representation objective for one batch:
///
/// * each episode contributes two disjoint fragments; the first is
///   reconstructed by the generator from its own prompt (`l1`) — or, for
///   `ctx_only` items, from a prompt read off the context alone,
/// * the second fragments of all episodes form the candidate pool for three
///   InfoNCE terms: same-episode (`l2_traj`), similar-return (`l2_return`,
///   skipped for `ctx_only` anchors), and — when task labels are present —
///   same-task (`l2_task`),
/// * `total = l1 + gamma * (l2_traj + l2_return [+ l2_task])`.
///
/// `p` must have the encoder and generator parameter sets bound.
pub fn pretrain_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    items: &[PretrainItem],
    knobs: &ContrastKnobs,
) -> Result<PretrainParts, GraphError> {
    if items.is_empty() {
        return Err(invalid("empty batch"));
    }
    let labeled = items.iter().filter(|it| it.task.is_some()).count();
    if labeled != 0 && labeled != items.len() {
        return Err(invalid("task labels must be on all items or none"));
    }
    if items.iter().any(|it| it.ctx_only && it.ctx.is_none()) {
        return Err(invalid("an item hides its fragment but has no context"));
    }

    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| items[i].key);
    for w in order.windows(2) {
        if items[w[0]].key == items[w[1]].key {
            return Err(invalid(format!("duplicate episode key {}", items[w[0]].key)));
        }
    }

    // Encode both fragments of every episode and reconstruct the first.
    let mut anchors: Vec<NodeId> = Vec::with_capacity(order.len());
    let mut anchor_returns = Vec::with_capacity(order.len());
    let mut pool: Vec<NodeId> = Vec::with_capacity(order.len());
    let mut pool_returns = Vec::with_capacity(order.len());
    let mut tasks = Vec::with_capacity(order.len());
    let mut recon_terms = Vec::with_capacity(order.len());
    for &i in &order {
        let it = &items[i];
        let mut rng = RngStream::new(knobs.seed, it.key);
        let (anchor_frag, other_frag) = disjoint_fragments(it.episode, knobs.frag_len, &mut rng)
            .ok_or_else(|| {
                invalid(format!(
                    "episode {} is too short to split into two fragments",
                    it.key
                ))
            })?;

        let blank = match it.episode.actions {
            Actions::Continuous(_) => Trajectory::empty_continuous(),
            Actions::Discrete(_) => Trajectory::empty_discrete(),
        };
        let a_view = if it.ctx_only { &blank } else { &anchor_frag };
        let a_seq = encoder_tokens(cfg, it.ctx, a_view);
        let z_anchor = encode_graph(g, cfg, p, &a_seq)?;
        let o_seq = encoder_tokens(cfg, it.ctx, &other_frag);
        let z_other = encode_graph(g, cfg, p, &o_seq)?;

        let body = anchor_frag.body();
        let gen_seq = generator_tokens(cfg, &body);
        let heads = generator_heads(g, cfg, p, z_anchor, &gen_seq)?;
        recon_terms.push(supervised_loss(g, cfg, &heads, &anchor_frag)?);

        anchors.push(z_anchor);
        anchor_returns.push(anchor_frag.ret());
        pool.push(z_other);
        pool_returns.push(other_frag.ret());
        tasks.push(it.task);
    }

    let l1 = mean_or_zero(g, &recon_terms)?;

    let mut traj_terms = Vec::with_capacity(anchors.len());
    for (i, &za) in anchors.iter().enumerate() {
        traj_terms.push(info_nce(g, za, &pool, i, knobs.alpha)?);
    }
    let l2_traj = mean_or_zero(g, &traj_terms)?;

    let mut return_terms = Vec::new();
    for (i, &za) in anchors.iter().enumerate() {
        if items[order[i]].ctx_only {
            continue;
        }
        if let Some((kept, pos)) =
            return_contrast_sets(anchor_returns[i], &pool_returns, knobs.return_margin)
        {
            let cands: Vec<NodeId> = kept.iter().map(|&j| pool[j]).collect();
            return_terms.push(info_nce(g, za, &cands, pos, knobs.alpha)?);
        }
    }
    let l2_return = mean_or_zero(g, &return_terms)?;

    let l2_task = if labeled == items.len() {
        let task_ids: Vec<usize> = tasks.iter().map(|t| t.unwrap()).collect();
        let mut task_terms = Vec::new();
        for (i, &za) in anchors.iter().enumerate() {
            let key = items[order[i]].key;
            let mut rng = RngStream::new(knobs.seed, key).derive_named("task");
            if let Some((kept, pos)) = task_contrast_sets(task_ids[i], &task_ids, &mut rng) {
                let cands: Vec<NodeId> = kept.iter().map(|&j| pool[j]).collect();
                task_terms.push(info_nce(g, za, &cands, pos, knobs.alpha)?);
            }
        }
        Some(mean_or_zero(g, &task_terms)?)
    } else {
        None
    };

    let mut contrast = g.add(l2_traj, l2_return)?;
    if let Some(t) = l2_task {
        contrast = g.add(contrast, t)?;
    }
    let weighted = g.scale(contrast, knobs.gamma)?;
    let total = g.add(l1, weighted)?;

    Ok(PretrainParts {
        total,
        l1,
        l2_traj,
        l2_return,
        l2_task,
    })
}
