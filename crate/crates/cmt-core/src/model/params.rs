//! Parameter inventory, initialization, and graph binding.
//!
//! `parameter_specs` is the single source of truth for every tensor the model
//! owns: initialization draws from it and checkpoint loading validates
//! against it, so the two can never drift apart.

use std::collections::BTreeMap;

use crate::model::tokens::MODALITY_COUNT;
use crate::model::ModelConfig;
use crate::optim::ParamSet;
use crate::rng::RngStream;
use crate::{Graph, Tensor};
use crate::autodiff::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Gaussian, std 0.02.
    Gauss,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: String, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    }
}

/// Embedding + transformer-block parameters shared by both networks.
fn trunk_specs(out: &mut Vec<ParamSpec>, p: &str, cfg: &ModelConfig) {
    let d = cfg.embed_dim;
    let a = cfg.action_kind.width();
    out.push(spec(format!("{p}.embed.state.w"), &[cfg.state_dim, d], Init::Gauss));
    out.push(spec(format!("{p}.embed.state.b"), &[1, d], Init::Zeros));
    out.push(spec(format!("{p}.embed.action.w"), &[a, d], Init::Gauss));
    out.push(spec(format!("{p}.embed.action.b"), &[1, d], Init::Zeros));
    out.push(spec(format!("{p}.embed.reward.w"), &[1, d], Init::Gauss));
    out.push(spec(format!("{p}.embed.reward.b"), &[1, d], Init::Zeros));
    out.push(spec(format!("{p}.embed.modality"), &[MODALITY_COUNT, d], Init::Gauss));
    // One row per step index plus one for a trailing state at full horizon.
    out.push(spec(format!("{p}.embed.time"), &[cfg.max_horizon + 1, d], Init::Gauss));
    for l in 0..cfg.layers {
        attn_specs(out, &format!("{p}.l{l}.attn"), d);
        out.push(spec(format!("{p}.l{l}.ln1.g"), &[1, d], Init::Ones));
        out.push(spec(format!("{p}.l{l}.ln1.b"), &[1, d], Init::Zeros));
        out.push(spec(format!("{p}.l{l}.ln2.g"), &[1, d], Init::Ones));
        out.push(spec(format!("{p}.l{l}.ln2.b"), &[1, d], Init::Zeros));
        out.push(spec(format!("{p}.l{l}.mlp.w1"), &[d, 4 * d], Init::Gauss));
        out.push(spec(format!("{p}.l{l}.mlp.b1"), &[1, 4 * d], Init::Zeros));
        out.push(spec(format!("{p}.l{l}.mlp.w2"), &[4 * d, d], Init::Gauss));
        out.push(spec(format!("{p}.l{l}.mlp.b2"), &[1, d], Init::Zeros));
    }
    out.push(spec(format!("{p}.lnf.g"), &[1, d], Init::Ones));
    out.push(spec(format!("{p}.lnf.b"), &[1, d], Init::Zeros));
}

fn attn_specs(out: &mut Vec<ParamSpec>, p: &str, d: usize) {
    for proj in ["wq", "wk", "wv", "wo"] {
        out.push(spec(format!("{p}.{proj}"), &[d, d], Init::Gauss));
    }
    for bias in ["bq", "bk", "bv", "bo"] {
        out.push(spec(format!("{p}.{bias}"), &[1, d], Init::Zeros));
    }
}

/// Every encoder parameter (prefix `enc.`).
pub fn encoder_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.embed_dim;
    let m = cfg.prompt_len;
    let mut out = Vec::new();
    trunk_specs(&mut out, "enc", cfg);
    out.push(spec("enc.embed.sep".into(), &[1, d], Init::Gauss));
    // Learned queries that pool the token stream into m prompt vectors.
    out.push(spec("enc.pool.q".into(), &[m, d], Init::Gauss));
    attn_specs(&mut out, "enc.pool.attn", d);
    out.push(spec("enc.pool.ln.g".into(), &[1, d], Init::Ones));
    out.push(spec("enc.pool.ln.b".into(), &[1, d], Init::Zeros));
    // Prompt returned for an empty trajectory, where there is nothing to pool.
    out.push(spec("enc.z0".into(), &[m, d], Init::Gauss));
    out
}

/// Every generator parameter (prefix `gen.`).
pub fn generator_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.embed_dim;
    let mut out = Vec::new();
    trunk_specs(&mut out, "gen", cfg);
    out.push(spec("gen.head.action.w".into(), &[d, cfg.action_kind.width()], Init::Gauss));
    out.push(spec("gen.head.action.b".into(), &[1, cfg.action_kind.width()], Init::Zeros));
    out.push(spec("gen.head.reward.w".into(), &[d, 1], Init::Gauss));
    out.push(spec("gen.head.reward.b".into(), &[1, 1], Init::Zeros));
    out.push(spec("gen.head.state.w".into(), &[d, cfg.state_dim], Init::Gauss));
    out.push(spec("gen.head.state.b".into(), &[1, cfg.state_dim], Init::Zeros));
    out
}

/// Every adaptor parameter (prefix `adapt.`). The second layer starts at
/// zero so the adaptor is exactly the identity until tuned.
pub fn adaptor_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let w = cfg.prompt_len * cfg.embed_dim;
    vec![
        spec("adapt.w1".into(), &[w, w], Init::Gauss),
        spec("adapt.b1".into(), &[1, w], Init::Zeros),
        spec("adapt.w2".into(), &[w, w], Init::Zeros),
        spec("adapt.b2".into(), &[1, w], Init::Zeros),
    ]
}

/// Full inventory: encoder, then generator, then adaptor.
pub fn parameter_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = encoder_specs(cfg);
    out.extend(generator_specs(cfg));
    out.extend(adaptor_specs(cfg));
    out
}

/// The three parameter sets plus training-stage bookkeeping.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub cfg: ModelConfig,
    pub encoder: ParamSet,
    pub generator: ParamSet,
    pub adaptor: ParamSet,
    /// Set once the representation stage finishes; later stages must not
    /// update the frozen sets.
    pub frozen_encoder: bool,
    pub frozen_generator: bool,
    /// Free-form strings persisted with checkpoints (dataset provenance,
    /// normalization anchors); never interpreted by the model itself.
    pub provenance: BTreeMap<String, String>,
}

fn init_set(specs: &[ParamSpec], rng: &RngStream) -> ParamSet {
    let mut set = ParamSet::new();
    for s in specs {
        let mut t = Tensor::zeros(&s.shape);
        match s.init {
            Init::Zeros => {}
            Init::Ones => t.data_mut().fill(1.0),
            Init::Gauss => {
                // Derive per parameter name so one tensor's draw count never
                // shifts another's values.
                let mut r = rng.derive_named(&s.name);
                for v in t.data_mut() {
                    *v = 0.02 * r.normal();
                }
            }
        }
        set.insert(s.name.clone(), t);
    }
    set
}

pub fn init_bundle(cfg: &ModelConfig, seed: u64) -> ModelBundle {
    let rng = RngStream::new(seed, 0);
    ModelBundle {
        cfg: cfg.clone(),
        encoder: init_set(&encoder_specs(cfg), &rng),
        generator: init_set(&generator_specs(cfg), &rng),
        adaptor: init_set(&adaptor_specs(cfg), &rng),
        frozen_encoder: false,
        frozen_generator: false,
        provenance: BTreeMap::new(),
    }
}

/// Parameter sets bound into a graph as leaves, addressable by name.
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn new() -> Self {
        Bound { ids: BTreeMap::new() }
    }

    /// Bind every tensor in `set`; `trainable` decides whether gradients are
    /// tracked (frozen stages bind their sets as constants).
    pub fn bind(&mut self, g: &mut Graph, set: &ParamSet, trainable: bool) {
        for (name, t) in set.iter() {
            let id = g.leaf(t.clone(), trainable);
            self.ids.insert(name.clone(), id);
        }
    }

    /// Node for a parameter. Missing names are an internal invariant
    /// violation (specs and call sites share one inventory), hence panic.
    pub fn id(&self, name: &str) -> NodeId {
        match self.ids.get(name) {
            Some(id) => *id,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    /// Gradients aligned with `set`: params the loss never touched get zeros.
    pub fn grads_for(&self, g: &Graph, set: &ParamSet) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, t) in set.iter() {
            let grad = self
                .ids
                .get(name)
                .and_then(|id| g.grad(*id))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            out.insert(name.clone(), grad);
        }
        out
    }
}

impl Default for Bound {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActionKind;

    fn cfg() -> ModelConfig {
        ModelConfig::base(2, ActionKind::Continuous { dim: 1 })
    }

    #[test]
    fn inventory_matches_initialized_sets() {
        let cfg = cfg();
        let b = init_bundle(&cfg, 7);
        let specs = parameter_specs(&cfg);
        assert_eq!(
            specs.len(),
            b.encoder.len() + b.generator.len() + b.adaptor.len()
        );
        for s in &specs {
            let t = b
                .encoder
                .get(&s.name)
                .or_else(|| b.generator.get(&s.name))
                .or_else(|| b.adaptor.get(&s.name))
                .unwrap_or_else(|| panic!("{} missing", s.name));
            assert_eq!(t.shape(), &s.shape[..], "{}", s.name);
        }
    }

    #[test]
    fn names_are_unique() {
        let specs = parameter_specs(&cfg());
        let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let before = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), before);
    }

    #[test]
    fn adaptor_second_layer_starts_at_zero() {
        let b = init_bundle(&cfg(), 7);
        assert!(b.adaptor.get("adapt.w2").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(b.adaptor.get("adapt.b2").unwrap().data().iter().all(|&v| v == 0.0));
        // First layer is not degenerate.
        assert!(b.adaptor.get("adapt.w1").unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_bundle(&cfg(), 42);
        let b = init_bundle(&cfg(), 42);
        let c = init_bundle(&cfg(), 43);
        assert_eq!(a.encoder.byte_image(), b.encoder.byte_image());
        assert_eq!(a.generator.byte_image(), b.generator.byte_image());
        assert_ne!(a.encoder.byte_image(), c.encoder.byte_image());
    }

    #[test]
    fn layer_norm_gains_start_at_one() {
        let b = init_bundle(&cfg(), 7);
        assert!(b.encoder.get("enc.l0.ln1.g").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(b.generator.get("gen.lnf.g").unwrap().data().iter().all(|&v| v == 1.0));
    }
}
