//! Graph builders for the encoder, generator, and adaptor, plus value-only
//! wrappers for inference.

use crate::autodiff::{GraphError, NodeId};
use crate::model::params::Bound;
use crate::model::tokens::{
    encoder_tokens, generator_tokens, TokenSequence, TokenValue, MODALITY_COUNT,
};
use crate::model::{ActionKind, ModelBundle, ModelConfig};
use crate::traj::{StepAction, Trajectory};
use crate::{Graph, Tensor};

const LN_EPS: f64 = 1e-5;
/// Additive attention mask for forbidden pairs. Large enough that
/// `exp(x - max)` underflows to exactly 0, which makes causality checks
/// bit-exact rather than approximate.
const MASK_OFF: f64 = -1e30;

type Result<T> = std::result::Result<T, GraphError>;

fn invalid(msg: impl Into<String>) -> GraphError {
    GraphError::Invalid {
        op: "model",
        msg: msg.into(),
    }
}

/// Constant matrix with ones at the given `(row, col)` positions.
fn scatter_matrix(g: &mut Graph, rows: usize, cols: usize, ones: &[(usize, usize)]) -> NodeId {
    let mut t = Tensor::zeros(&[rows, cols]);
    for &(r, c) in ones {
        t.data_mut()[r * cols + c] = 1.0;
    }
    g.constant(t)
}

/// Embed a token sequence into an `n x d` matrix: per-modality value
/// projections scattered back into sequence order, plus modality and
/// step-index embeddings. The sequence must be non-empty.
pub(crate) fn embed_tokens(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    net: &str,
    seq: &TokenSequence,
) -> Result<NodeId> {
    let n = seq.len();
    if n == 0 {
        return Err(invalid("cannot embed an empty token sequence"));
    }
    let awidth = cfg.action_kind.width();
    let mut st = (Vec::new(), Vec::new());
    let mut ac = (Vec::new(), Vec::new());
    let mut rw = (Vec::new(), Vec::new());
    let mut sep_pos = Vec::new();
    for (i, tok) in seq.tokens.iter().enumerate() {
        match &tok.value {
            TokenValue::State(s) => {
                if s.len() != cfg.state_dim {
                    return Err(invalid(format!(
                        "state token has dim {}, model expects {}",
                        s.len(),
                        cfg.state_dim
                    )));
                }
                st.0.push(i);
                st.1.extend_from_slice(s);
            }
            TokenValue::ContAction(a) => {
                if !matches!(cfg.action_kind, ActionKind::Continuous { dim } if dim == a.len()) {
                    return Err(invalid(format!(
                        "continuous action of dim {} does not fit {:?}",
                        a.len(),
                        cfg.action_kind
                    )));
                }
                ac.0.push(i);
                ac.1.extend_from_slice(a);
            }
            TokenValue::DiscAction(k) => {
                if !matches!(cfg.action_kind, ActionKind::Discrete { cardinality } if *k < cardinality)
                {
                    return Err(invalid(format!(
                        "discrete action {k} does not fit {:?}",
                        cfg.action_kind
                    )));
                }
                ac.0.push(i);
                let mut row = vec![0.0; awidth];
                row[*k] = 1.0;
                ac.1.extend_from_slice(&row);
            }
            TokenValue::Reward(r) => {
                rw.0.push(i);
                rw.1.push(*r);
            }
            TokenValue::Sep => sep_pos.push(i),
        }
        if tok.time > cfg.max_horizon {
            return Err(invalid(format!(
                "token step index {} exceeds horizon {}",
                tok.time, cfg.max_horizon
            )));
        }
    }

    let mut total: Option<NodeId> = None;
    let accumulate = |g: &mut Graph, part: NodeId, total: &mut Option<NodeId>| -> Result<()> {
        *total = Some(match *total {
            Some(t) => g.add(t, part)?,
            None => part,
        });
        Ok(())
    };

    // Value projections, one dense batch per modality.
    for (positions, flat, in_dim, stem) in [
        (&st.0, &st.1, cfg.state_dim, "state"),
        (&ac.0, &ac.1, awidth, "action"),
        (&rw.0, &rw.1, 1, "reward"),
    ] {
        if positions.is_empty() {
            continue;
        }
        let raw = Tensor::from_vec(&[positions.len(), in_dim], flat.clone())
            .map_err(|e| invalid(e.to_string()))?;
        let v = g.constant(raw);
        let w = p.id(&format!("{net}.embed.{stem}.w"));
        let b = p.id(&format!("{net}.embed.{stem}.b"));
        let e = g.linear(v, w, Some(b))?;
        let ones: Vec<(usize, usize)> = positions.iter().enumerate().map(|(j, &i)| (i, j)).collect();
        let scat = scatter_matrix(g, n, positions.len(), &ones);
        let placed = g.matmul(scat, e)?;
        accumulate(g, placed, &mut total)?;
    }
    if !sep_pos.is_empty() {
        let ones: Vec<(usize, usize)> = sep_pos.iter().map(|&i| (i, 0)).collect();
        let scat = scatter_matrix(g, n, 1, &ones);
        let sep = p.id(&format!("{net}.embed.sep"));
        let placed = g.matmul(scat, sep)?;
        accumulate(g, placed, &mut total)?;
    }

    // Modality and step-index embeddings as one-hot table lookups.
    let kind_ones: Vec<(usize, usize)> = seq
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (i, t.value.modality() as usize))
        .collect();
    let kind_sel = scatter_matrix(g, n, MODALITY_COUNT, &kind_ones);
    let kind_table = p.id(&format!("{net}.embed.modality"));
    let kind_emb = g.matmul(kind_sel, kind_table)?;
    accumulate(g, kind_emb, &mut total)?;

    let time_ones: Vec<(usize, usize)> =
        seq.tokens.iter().enumerate().map(|(i, t)| (i, t.time)).collect();
    let time_sel = scatter_matrix(g, n, cfg.max_horizon + 1, &time_ones);
    let time_table = p.id(&format!("{net}.embed.time"));
    let time_emb = g.matmul(time_sel, time_table)?;
    accumulate(g, time_emb, &mut total)?;

    Ok(total.expect("at least the modality embedding is present"))
}

/// Layer norm with learned gain and bias (`{prefix}.g`, `{prefix}.b`).
fn ln_affine(g: &mut Graph, p: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    let normed = g.layer_norm(x, LN_EPS)?;
    let shape = g.shape(normed).to_vec();
    let gain = p.id(&format!("{prefix}.g"));
    let bias = p.id(&format!("{prefix}.b"));
    let gain_b = g.broadcast_to(gain, &shape)?;
    let scaled = g.mul(normed, gain_b)?;
    let bias_b = g.broadcast_to(bias, &shape)?;
    g.add(scaled, bias_b)
}

/// Multi-head attention of `q_in` over `kv_in` with an optional additive
/// mask over the `(query, key)` score matrix.
fn attention(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    prefix: &str,
    q_in: NodeId,
    kv_in: NodeId,
    mask: Option<NodeId>,
) -> Result<NodeId> {
    let dk = cfg.head_dim();
    let wq = p.id(&format!("{prefix}.wq"));
    let bq = p.id(&format!("{prefix}.bq"));
    let wk = p.id(&format!("{prefix}.wk"));
    let bk = p.id(&format!("{prefix}.bk"));
    let wv = p.id(&format!("{prefix}.wv"));
    let bv = p.id(&format!("{prefix}.bv"));
    let q = g.linear(q_in, wq, Some(bq))?;
    let k = g.linear(kv_in, wk, Some(bk))?;
    let v = g.linear(kv_in, wv, Some(bv))?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice(q, 1, h * dk, dk)?;
        let kh = g.slice(k, 1, h * dk, dk)?;
        let vh = g.slice(v, 1, h * dk, dk)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scaled = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
        if let Some(m) = mask {
            scaled = g.add(scaled, m)?;
        }
        let attn = g.softmax(scaled, 1)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let merged = g.concat(&heads, 1)?;
    let wo = p.id(&format!("{prefix}.wo"));
    let bo = p.id(&format!("{prefix}.bo"));
    g.linear(merged, wo, Some(bo))
}

/// Pre-norm transformer block: attention and MLP sublayers, each residual.
fn block(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    prefix: &str,
    x: NodeId,
    mask: Option<NodeId>,
) -> Result<NodeId> {
    let h = ln_affine(g, p, &format!("{prefix}.ln1"), x)?;
    let att = attention(g, cfg, p, &format!("{prefix}.attn"), h, h, mask)?;
    let x = g.add(x, att)?;
    let h = ln_affine(g, p, &format!("{prefix}.ln2"), x)?;
    let w1 = p.id(&format!("{prefix}.mlp.w1"));
    let b1 = p.id(&format!("{prefix}.mlp.b1"));
    let pre = g.linear(h, w1, Some(b1))?;
    let act = g.gelu(pre)?;
    let w2 = p.id(&format!("{prefix}.mlp.w2"));
    let b2 = p.id(&format!("{prefix}.mlp.b2"));
    let out = g.linear(act, w2, Some(b2))?;
    g.add(x, out)
}

/// Bidirectional encoder: embeds the sequence, runs the unmasked trunk, then
/// pools with learned queries into an `m x d` prompt. An empty sequence
/// returns the dedicated empty-input prompt parameter.
pub fn encode_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    seq: &TokenSequence,
) -> Result<NodeId> {
    if seq.is_empty() {
        return Ok(p.id("enc.z0"));
    }
    let mut x = embed_tokens(g, cfg, p, "enc", seq)?;
    for l in 0..cfg.layers {
        x = block(g, cfg, p, &format!("enc.l{l}"), x, None)?;
    }
    let h = ln_affine(g, p, "enc.lnf", x)?;
    let q = p.id("enc.pool.q");
    let pooled = attention(g, cfg, p, "enc.pool.attn", q, h, None)?;
    let z = g.add(q, pooled)?;
    ln_affine(g, p, "enc.pool.ln", z)
}

/// Attention mask for the generator: token rows see the whole prompt plus
/// their own past, while prompt rows see only other prompt rows, so no
/// trajectory information can flow backwards through the prompt positions.
fn prompt_causal_mask(g: &mut Graph, prompt_len: usize, total: usize) -> NodeId {
    let mut t = Tensor::full(&[total, total], MASK_OFF);
    let d = t.data_mut();
    for i in 0..total {
        let visible = if i < prompt_len { prompt_len } else { i + 1 };
        for j in 0..visible {
            d[i * total + j] = 0.0;
        }
    }
    g.constant(t)
}

/// Generator outputs, one prediction row per observed token of the matching
/// kind. `states` row 0 is the first-state prediction read off the last
/// prompt slot; row `t + 1` is the successor of step `t`.
#[derive(Debug, Clone, Copy)]
pub struct GenHeads {
    /// `(steps + trailing) x action_width`; one row per state token.
    pub actions: Option<NodeId>,
    /// `steps x 1`; one row per action token.
    pub rewards: Option<NodeId>,
    /// `(steps + 1) x state_dim`.
    pub states: NodeId,
    pub steps: usize,
    pub has_trailing: bool,
}

/// Run the generator over `prompt ++ tokens` and read out the prediction
/// heads. `z` must be an `m x d` node; `seq` must come from
/// [`generator_tokens`] (full step triples, optionally a trailing state).
pub fn generator_heads(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    z: NodeId,
    seq: &TokenSequence,
) -> Result<GenHeads> {
    let m = cfg.prompt_len;
    if g.shape(z) != [m, cfg.embed_dim] {
        return Err(invalid(format!(
            "prompt shape {:?} does not match model ({m} x {})",
            g.shape(z),
            cfg.embed_dim
        )));
    }
    let n = seq.len();
    let (steps, has_trailing) = match n % 3 {
        0 => (n / 3, false),
        1 => (n / 3, true),
        _ => {
            return Err(invalid(
                "generator input must be whole step triples plus at most one trailing state",
            ))
        }
    };
    let mut x = if n == 0 {
        z
    } else {
        let tok = embed_tokens(g, cfg, p, "gen", seq)?;
        g.concat(&[z, tok], 0)?
    };
    let total = m + n;
    let mask = prompt_causal_mask(g, m, total);
    for l in 0..cfg.layers {
        x = block(g, cfg, p, &format!("gen.l{l}"), x, Some(mask))?;
    }
    let h = ln_affine(g, p, "gen.lnf", x)?;

    let head = |g: &mut Graph, rows: &[usize], stem: &str| -> Result<NodeId> {
        let ones: Vec<(usize, usize)> = rows.iter().enumerate().map(|(j, &r)| (j, r)).collect();
        let sel = scatter_matrix(g, rows.len(), total, &ones);
        let picked = g.matmul(sel, h)?;
        let w = p.id(&format!("gen.head.{stem}.w"));
        let b = p.id(&format!("gen.head.{stem}.b"));
        g.linear(picked, w, Some(b))
    };

    let mut state_rows: Vec<usize> = vec![m - 1];
    state_rows.extend((0..steps).map(|t| m + 3 * t + 2));
    let states = head(g, &state_rows, "state")?;

    let mut action_rows: Vec<usize> = (0..steps).map(|t| m + 3 * t).collect();
    if has_trailing {
        action_rows.push(m + 3 * steps);
    }
    let actions = if action_rows.is_empty() {
        None
    } else {
        Some(head(g, &action_rows, "action")?)
    };

    let reward_rows: Vec<usize> = (0..steps).map(|t| m + 3 * t + 1).collect();
    let rewards = if reward_rows.is_empty() {
        None
    } else {
        Some(head(g, &reward_rows, "reward")?)
    };

    Ok(GenHeads {
        actions,
        rewards,
        states,
        steps,
        has_trailing,
    })
}

/// Residual two-layer MLP over the flattened prompt. With its second layer
/// at zero (the initial state) this is exactly the identity.
pub fn adaptor_graph(g: &mut Graph, cfg: &ModelConfig, p: &Bound, z: NodeId) -> Result<NodeId> {
    let m = cfg.prompt_len;
    let d = cfg.embed_dim;
    let flat = g.reshape(z, &[1, m * d])?;
    let w1 = p.id("adapt.w1");
    let b1 = p.id("adapt.b1");
    let pre = g.linear(flat, w1, Some(b1))?;
    let act = g.gelu(pre)?;
    let w2 = p.id("adapt.w2");
    let b2 = p.id("adapt.b2");
    let delta = g.linear(act, w2, Some(b2))?;
    let out = g.add(flat, delta)?;
    g.reshape(out, &[m, d])
}

// ---- value-only wrappers ----

/// Encode a trajectory (with optional context) to its prompt matrix.
pub fn encode(
    bundle: &ModelBundle,
    ctx: Option<&Trajectory>,
    traj: &Trajectory,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let mut p = Bound::new();
    p.bind(&mut g, &bundle.encoder, false);
    let seq = encoder_tokens(&bundle.cfg, ctx, traj);
    let z = encode_graph(&mut g, &bundle.cfg, &p, &seq)?;
    Ok(g.value(z).clone())
}

/// Pass a prompt through the adaptor.
pub fn adaptor_apply(bundle: &ModelBundle, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let mut p = Bound::new();
    p.bind(&mut g, &bundle.adaptor, false);
    let zin = g.constant(z.clone());
    let out = adaptor_graph(&mut g, &bundle.cfg, &p, zin)?;
    Ok(g.value(out).clone())
}

/// Greedy action at the most recent state of `history`, which must end in a
/// state awaiting its action. Continuous actions are the head output as-is;
/// discrete actions take the arg-max logit.
pub fn greedy_action(bundle: &ModelBundle, z: &Tensor, history: &Trajectory) -> Result<StepAction> {
    if !history.has_trailing_state() {
        return Err(invalid("history must end in a state awaiting an action"));
    }
    let mut g = Graph::new();
    let mut p = Bound::new();
    p.bind(&mut g, &bundle.generator, false);
    let seq = generator_tokens(&bundle.cfg, history);
    let zin = g.constant(z.clone());
    let heads = generator_heads(&mut g, &bundle.cfg, &p, zin, &seq)?;
    let actions = heads.actions.expect("trailing state row always predicts");
    let out = g.value(actions);
    let width = bundle.cfg.action_kind.width();
    let last = &out.data()[out.data().len() - width..];
    Ok(match bundle.cfg.action_kind {
        ActionKind::Continuous { .. } => StepAction::Continuous(last.to_vec()),
        ActionKind::Discrete { .. } => {
            let mut best = 0;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            StepAction::Discrete(best)
        }
    })
}

/// Sum of the generator's per-step reward predictions for `traj` under
/// prompt `z` — the quantity the improvement stage ascends. Zero if the
/// trajectory has no completed steps.
pub fn predicted_return(bundle: &ModelBundle, z: &Tensor, traj: &Trajectory) -> Result<f64> {
    let mut g = Graph::new();
    let mut p = Bound::new();
    p.bind(&mut g, &bundle.generator, false);
    let seq = generator_tokens(&bundle.cfg, traj);
    let zin = g.constant(z.clone());
    let heads = generator_heads(&mut g, &bundle.cfg, &p, zin, &seq)?;
    Ok(match heads.rewards {
        Some(r) => g.value(r).data().iter().sum(),
        None => 0.0,
    })
}
