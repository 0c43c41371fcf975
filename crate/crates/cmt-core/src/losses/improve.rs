//! Improvement-stage objectives: gradient ascent on a prompt against the
//! frozen generator's predicted return, and the two adaptor losses (direct
//! return maximization and distillation toward ascended prompts).

use crate::autodiff::{GraphError, NodeId};
use crate::model::{adaptor_graph, generator_heads, generator_tokens, Bound, ModelConfig};
use crate::optim::ParamSet;
use crate::traj::Trajectory;
use crate::{Graph, Tensor};

fn invalid(msg: impl Into<String>) -> GraphError {
    GraphError::Invalid {
        op: "improve",
        msg: msg.into(),
    }
}

#[derive(Debug, Clone)]
pub struct AscentConfig {
    pub step_size: f64,
    pub steps: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            step_size: 0.01,
            steps: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentOutcome {
    pub prompt: Tensor,
    /// Objective at the starting prompt.
    pub initial_objective: f64,
    /// Objective at the returned prompt.
    pub final_objective: f64,
}

/// Plain gradient ascent: `z += step_size * grad` for `steps` iterations.
/// `eval` returns the objective and its gradient at a prompt.
pub fn ascend_with<F>(
    z0: &Tensor,
    ac: &AscentConfig,
    mut eval: F,
) -> Result<AscentOutcome, GraphError>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor), GraphError>,
{
    let mut z = z0.clone();
    let mut initial = None;
    for _ in 0..ac.steps {
        let (obj, grad) = eval(&z)?;
        if initial.is_none() {
            initial = Some(obj);
        }
        if grad.shape() != z.shape() {
            return Err(invalid(format!(
                "gradient shape {:?} does not match prompt {:?}",
                grad.shape(),
                z.shape()
            )));
        }
        for (zi, gi) in z.data_mut().iter_mut().zip(grad.data()) {
            *zi += ac.step_size * gi;
        }
    }
    let (final_objective, _) = eval(&z)?;
    Ok(AscentOutcome {
        prompt: z,
        initial_objective: initial.unwrap_or(final_objective),
        final_objective,
    })
}

/// Predicted return of `traj` under prompt `z`, with its gradient in `z`,
/// against a frozen generator.
fn return_and_grad(
    cfg: &ModelConfig,
    generator: &ParamSet,
    z: &Tensor,
    traj: &Trajectory,
) -> Result<(f64, Tensor), GraphError> {
    let mut g = Graph::new();
    let mut p = Bound::new();
    p.bind(&mut g, generator, false);
    let zn = g.leaf(z.clone(), true);
    let seq = generator_tokens(cfg, traj);
    let heads = generator_heads(&mut g, cfg, &p, zn, &seq)?;
    let rewards = heads
        .rewards
        .ok_or_else(|| invalid("trajectory has no completed steps to score"))?;
    let objective = g.sum(rewards)?;
    let obj = g.value(objective).item();
    g.backward(objective)?;
    let grad = g
        .grad(zn)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(z.shape()));
    Ok((obj, grad))
}

/// Ascend a prompt along the gradient of the generator's predicted return
/// for `traj`. The generator is treated as frozen.
pub fn prompt_ascent(
    cfg: &ModelConfig,
    generator: &ParamSet,
    z0: &Tensor,
    traj: &Trajectory,
    ac: &AscentConfig,
) -> Result<AscentOutcome, GraphError> {
    ascend_with(z0, ac, |z| return_and_grad(cfg, generator, z, traj))
}

/// Direct adaptor objective for one trajectory:
/// `-predicted_return(adapt(z)) + beta * ||z - adapt(z)||^2`.
/// Bind the generator set frozen and the adaptor set trainable in `p`.
pub fn adaptor_direct_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    z: &Tensor,
    traj: &Trajectory,
    beta: f64,
) -> Result<NodeId, GraphError> {
    let zn = g.constant(z.clone());
    let adapted = adaptor_graph(g, cfg, p, zn)?;
    let seq = generator_tokens(cfg, traj);
    let heads = generator_heads(g, cfg, p, adapted, &seq)?;
    let rewards = heads
        .rewards
        .ok_or_else(|| invalid("trajectory has no completed steps to score"))?;
    let ret = g.sum(rewards)?;
    let neg_ret = g.neg(ret)?;
    let drift = g.sub(zn, adapted)?;
    let drift_sq = g.sq_sum(drift)?;
    let penalty = g.scale(drift_sq, beta)?;
    g.add(neg_ret, penalty)
}

/// Distillation adaptor objective:
/// `||adapt(z) - target||^2 + beta * ||z - adapt(z)||^2`,
/// where `target` is an ascended version of `z`.
pub fn adaptor_distill_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    z: &Tensor,
    target: &Tensor,
    beta: f64,
) -> Result<NodeId, GraphError> {
    if target.shape() != z.shape() {
        return Err(invalid(format!(
            "target shape {:?} does not match prompt {:?}",
            target.shape(),
            z.shape()
        )));
    }
    let zn = g.constant(z.clone());
    let adapted = adaptor_graph(g, cfg, p, zn)?;
    let tn = g.constant(target.clone());
    let gap = g.sub(adapted, tn)?;
    let gap_sq = g.sq_sum(gap)?;
    let drift = g.sub(zn, adapted)?;
    let drift_sq = g.sq_sum(drift)?;
    let penalty = g.scale(drift_sq, beta)?;
    g.add(gap_sq, penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode, init_bundle, predicted_return, ActionKind, ModelBundle};
    use crate::rng::RngStream;
    use crate::traj::{Actions, StepAction};

    fn cfg() -> ModelConfig {
        let mut c = ModelConfig::base(2, ActionKind::Continuous { dim: 1 });
        c.embed_dim = 8;
        c.layers = 1;
        c.heads = 2;
        c.prompt_len = 2;
        c.max_horizon = 8;
        c
    }

    fn bundle() -> ModelBundle {
        init_bundle(&cfg(), 21)
    }

    fn episode(seed: u64, steps: usize) -> Trajectory {
        let mut rng = RngStream::new(seed, 3);
        let mut t = Trajectory {
            states: vec![vec![rng.uniform(), rng.uniform()]],
            actions: Actions::Continuous(vec![]),
            rewards: vec![],
        };
        for _ in 0..steps {
            t.actions.push(StepAction::Continuous(vec![rng.uniform_in(-1.0, 1.0)]));
            t.rewards.push(rng.uniform_in(-1.0, 0.0));
            t.states.push(vec![rng.uniform(), rng.uniform()]);
        }
        t
    }

    #[test]
    fn ascent_matches_iterated_linear_reference() {
        // Objective w . z has constant gradient w, so ascent is exactly the
        // same additions the reference loop performs.
        let w = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 0.25, -0.125]).unwrap();
        let z0 = Tensor::from_vec(&[2, 3], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let ac = AscentConfig { step_size: 0.1, steps: 7 };
        let dot = |z: &Tensor| -> f64 {
            z.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let out = ascend_with(&z0, &ac, |z| Ok((dot(z), w.clone()))).unwrap();
        let mut reference = z0.clone();
        for _ in 0..7 {
            for (r, wi) in reference.data_mut().iter_mut().zip(w.data()) {
                *r += 0.1 * wi;
            }
        }
        assert_eq!(out.prompt.data(), reference.data());
        assert_eq!(out.initial_objective, dot(&z0));
        assert_eq!(out.final_objective, dot(&reference));
    }

    #[test]
    fn ascent_raises_the_predicted_return() {
        let b = bundle();
        let t = episode(1, 8);
        let frag = t.fragment(0, 4);
        let z = encode(&b, None, &frag).unwrap();
        let out = prompt_ascent(&cfg(), &b.generator, &z, &frag.body(), &AscentConfig::default())
            .unwrap();
        assert!(
            out.final_objective >= out.initial_objective,
            "{} < {}",
            out.final_objective,
            out.initial_objective
        );
        // The wrapper and the ascent must agree on the objective.
        let direct = predicted_return(&b, &z, &frag.body()).unwrap();
        assert!((direct - out.initial_objective).abs() < 1e-12);
    }

    #[test]
    fn direct_loss_at_identity_is_negative_return() {
        let b = bundle();
        let t = episode(2, 6);
        let frag = t.fragment(0, 4);
        let z = encode(&b, None, &frag).unwrap();
        let mut g = Graph::new();
        let mut p = Bound::new();
        p.bind(&mut g, &b.generator, false);
        p.bind(&mut g, &b.adaptor, true);
        let loss = adaptor_direct_loss(&mut g, &cfg(), &p, &z, &frag.body(), 1.0).unwrap();
        let expected = -predicted_return(&b, &z, &frag.body()).unwrap();
        // Identity adaptor: no drift penalty, loss is exactly -return.
        assert_eq!(g.value(loss).item(), expected);
    }

    #[test]
    fn distill_loss_is_zero_at_identity_with_own_target() {
        let b = bundle();
        let t = episode(3, 6);
        let frag = t.fragment(1, 4);
        let z = encode(&b, None, &frag).unwrap();
        let mut g = Graph::new();
        let mut p = Bound::new();
        p.bind(&mut g, &b.adaptor, true);
        let loss = adaptor_distill_loss(&mut g, &cfg(), &p, &z, &z, 1.0).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn gradients_stay_inside_the_adaptor() {
        let b = bundle();
        let t = episode(4, 6);
        let frag = t.fragment(0, 4);
        let z = encode(&b, None, &frag).unwrap();
        let mut g = Graph::new();
        let mut p = Bound::new();
        p.bind(&mut g, &b.generator, false); // frozen
        p.bind(&mut g, &b.adaptor, true);
        let loss = adaptor_direct_loss(&mut g, &cfg(), &p, &z, &frag.body(), 1.0).unwrap();
        g.backward(loss).unwrap();
        let gen_grads = p.grads_for(&g, &b.generator);
        assert!(gen_grads.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
        let adapt_grads = p.grads_for(&g, &b.adaptor);
        assert!(adapt_grads
            .values()
            .any(|t| t.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn beta_pulls_the_distilled_prompt_back_toward_z() {
        // One big-beta gradient step must shrink ||z - adapt(z)|| relative
        // to a zero-beta step from the same (non-identity) adaptor.
        let b0 = bundle();
        let mut warped = b0.clone();
        {
            let w2 = warped.adaptor.get_mut("adapt.w2").unwrap();
            let mut rng = RngStream::new(8, 8);
            for v in w2.data_mut() {
                *v = 0.05 * rng.normal();
            }
        }
        let t = episode(5, 6);
        let frag = t.fragment(0, 4);
        let z = encode(&b0, None, &frag).unwrap();
        let drift_after_step = |beta: f64| -> f64 {
            let mut g = Graph::new();
            let mut p = Bound::new();
            p.bind(&mut g, &warped.adaptor, true);
            let target = {
                let mut zt = z.clone();
                for v in zt.data_mut() {
                    *v += 0.5;
                }
                zt
            };
            let loss = adaptor_distill_loss(&mut g, &cfg(), &p, &z, &target, beta).unwrap();
            g.backward(loss).unwrap();
            let grads = p.grads_for(&g, &warped.adaptor);
            let mut stepped = warped.adaptor.clone();
            for (name, t) in stepped.iter_mut() {
                for (v, d) in t.data_mut().iter_mut().zip(grads[name].data()) {
                    *v -= 0.05 * d;
                }
            }
            let tuned = ModelBundle { adaptor: stepped, ..warped.clone() };
            let out = crate::model::adaptor_apply(&tuned, &z).unwrap();
            out.data()
                .iter()
                .zip(z.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        assert!(drift_after_step(50.0) < drift_after_step(0.0));
    }
}
