//! Behavior-cloning baseline: a small MLP from state to action, trained on
//! the same offline data the sequence model sees.

use super::EvalError;
use crate::autodiff::NodeId;
use crate::env::{Dataset, EnvSpec, Episode, HORIZON};
use crate::model::ActionKind;
use crate::optim::{Adam, AdamConfig, ParamSet};
use crate::rng::RngStream;
use crate::traj::StepAction;
use crate::{Graph, Tensor};

#[derive(Debug, Clone)]
pub struct BcConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            hidden: 32,
            epochs: 200,
            batch_size: 256,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcPolicy {
    pub state_dim: usize,
    pub action_kind: ActionKind,
    pub params: ParamSet,
}

fn gauss(rng: &mut RngStream, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::from_vec(shape, data).expect("static shape")
}

fn init_params(state_dim: usize, hidden: usize, out: usize, seed: u64) -> ParamSet {
    let rng = RngStream::new(seed, 0);
    let mut p = ParamSet::new();
    p.insert("bc.w1", gauss(&mut rng.derive_named("bc.w1"), &[state_dim, hidden], 0.1));
    p.insert("bc.b1", Tensor::zeros(&[1, hidden]));
    p.insert("bc.w2", gauss(&mut rng.derive_named("bc.w2"), &[hidden, out], 0.1));
    p.insert("bc.b2", Tensor::zeros(&[1, out]));
    p
}

fn forward(g: &mut Graph, ids: &[NodeId; 4], x: NodeId) -> Result<NodeId, EvalError> {
    let pre = g.linear(x, ids[0], Some(ids[1]))?;
    let act = g.gelu(pre)?;
    Ok(g.linear(act, ids[2], Some(ids[3]))?)
}

fn bind(g: &mut Graph, p: &ParamSet, trainable: bool) -> [NodeId; 4] {
    let mut id = |name: &str| {
        let t = p.get(name).expect("fixed inventory").clone();
        g.leaf(t, trainable)
    };
    [id("bc.w1"), id("bc.b1"), id("bc.w2"), id("bc.b2")]
}

pub fn train_bc(ds: &Dataset, cfg: &BcConfig) -> Result<BcPolicy, EvalError> {
    let spec = ds.manifest.env;
    spec.validate()?;
    let state_dim = spec.state_dim();
    let kind = spec.action_kind();
    if cfg.hidden == 0 || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(EvalError::Mismatch("degenerate baseline config".into()));
    }

    // Flatten the dataset into (state, action) pairs.
    let mut pairs: Vec<(&[f64], StepAction)> = Vec::new();
    for ep in &ds.episodes {
        for t in 0..ep.traj.steps() {
            pairs.push((&ep.traj.states[t], ep.traj.actions.get(t)));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::Mismatch("dataset holds no transitions".into()));
    }

    let mut params = init_params(state_dim, cfg.hidden, kind.width(), cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    for epoch in 0..cfg.epochs {
        let mut rng = RngStream::new(cfg.seed, 1 + epoch as u64);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let xs: Vec<f64> = chunk.iter().flat_map(|&i| pairs[i].0.iter().copied()).collect();
            let mut g = Graph::new();
            let ids = bind(&mut g, &params, true);
            let x = g.constant(Tensor::from_vec(&[b, state_dim], xs).expect("sized to shape"));
            let pred = forward(&mut g, &ids, x)?;
            let loss = match kind {
                ActionKind::Continuous { dim } => {
                    let mut ys = Vec::with_capacity(b * dim);
                    for &i in chunk {
                        let StepAction::Continuous(a) = &pairs[i].1 else {
                            unreachable!("kind-checked dataset");
                        };
                        ys.extend_from_slice(a);
                    }
                    let y = g.constant(Tensor::from_vec(&[b, dim], ys).expect("sized to shape"));
                    g.mse(pred, y)?
                }
                ActionKind::Discrete { .. } => {
                    let labels: Vec<usize> = chunk
                        .iter()
                        .map(|&i| {
                            let StepAction::Discrete(k) = pairs[i].1 else {
                                unreachable!("kind-checked dataset");
                            };
                            k
                        })
                        .collect();
                    let ce = g.cross_entropy(pred, &labels)?;
                    g.scale(ce, 1.0 / b as f64)?
                }
            };
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(EvalError::NonFinite(format!(
                    "baseline loss {value} at epoch {epoch}"
                )));
            }
            g.backward(loss)?;
            let mut grads = std::collections::BTreeMap::new();
            for (name, id) in ["bc.w1", "bc.b1", "bc.w2", "bc.b2"].iter().zip(ids) {
                grads.insert(name.to_string(), g.grad(id).expect("trainable leaf").clone());
            }
            adam.step(&mut [(&mut params, &grads)])
                .map_err(|e| EvalError::Mismatch(e.to_string()))?;
        }
    }
    Ok(BcPolicy {
        state_dim,
        action_kind: kind,
        params,
    })
}

impl BcPolicy {
    pub fn act(&self, state: &[f64]) -> Result<StepAction, EvalError> {
        if state.len() != self.state_dim {
            return Err(EvalError::Mismatch(format!(
                "state has dim {}, policy takes {}",
                state.len(),
                self.state_dim
            )));
        }
        let mut g = Graph::new();
        let ids = bind(&mut g, &self.params, false);
        let x = g.constant(Tensor::from_vec(&[1, self.state_dim], state.to_vec()).expect("sized to shape"));
        let out = forward(&mut g, &ids, x)?;
        let row = g.value(out).data();
        Ok(match self.action_kind {
            ActionKind::Continuous { .. } => StepAction::Continuous(row.to_vec()),
            ActionKind::Discrete { .. } => {
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .expect("nonzero cardinality");
                StepAction::Discrete(best)
            }
        })
    }
}

/// Roll the cloned policy out in a live environment, clamping continuous
/// actions exactly like model rollouts.
pub fn bc_rollout(
    policy: &BcPolicy,
    spec: &EnvSpec,
    episode_seed: u64,
) -> Result<Episode, EvalError> {
    spec.validate()?;
    if policy.state_dim != spec.state_dim() || policy.action_kind != spec.action_kind() {
        return Err(EvalError::Mismatch(
            "policy was cloned for a different environment".into(),
        ));
    }
    let mut env_rng = RngStream::new(episode_seed, 1);
    let mut traj = match spec.action_kind() {
        ActionKind::Continuous { .. } => crate::traj::Trajectory::empty_continuous(),
        ActionKind::Discrete { .. } => crate::traj::Trajectory::empty_discrete(),
    };
    let mut state = spec.initial_state(&mut env_rng);
    traj.states.push(state.clone());
    for _ in 0..HORIZON {
        let mut action = policy.act(&state)?;
        if let StepAction::Continuous(v) = &mut action {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EvalError::NonFinite(format!("policy produced {v:?}")));
            }
            if let Some((lo, hi)) = spec.action_bounds() {
                for x in v.iter_mut() {
                    *x = x.clamp(lo, hi);
                }
            }
        }
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
