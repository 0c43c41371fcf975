//! Sequence model: a bidirectional trajectory encoder that pools a fixed-size
//! prompt out of an offline trajectory, a causal generator that consumes the
//! prompt plus a trajectory prefix and predicts actions, rewards, and next
//! states, and a small residual adaptor used to steer prompts after the main
//! networks are frozen.

mod checkpoint;
mod net;
mod params;
mod tokens;

pub use checkpoint::{load_bundle, save_bundle, CheckpointError};
pub use net::{
    adaptor_apply, adaptor_graph, encode, encode_graph, generator_heads, greedy_action,
    predicted_return, GenHeads,
};
pub use params::{init_bundle, parameter_specs, Bound, Init, ModelBundle, ParamSpec};
pub use tokens::{encoder_tokens, generator_tokens, Modality, Token, TokenSequence, TokenValue};

use serde::{Deserialize, Serialize};

/// Action space of the modelled environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Continuous { dim: usize },
    Discrete { cardinality: usize },
}

impl ActionKind {
    /// Width of the action head output (vector dim or logit count).
    pub fn width(&self) -> usize {
        match *self {
            ActionKind::Continuous { dim } => dim,
            ActionKind::Discrete { cardinality } => cardinality,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionKind::Discrete { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Token embedding width.
    pub embed_dim: usize,
    /// Transformer blocks per network.
    pub layers: usize,
    /// Attention heads per block.
    pub heads: usize,
    /// Number of prompt vectors pooled out of the encoder.
    pub prompt_len: usize,
    /// Longest trajectory (in steps) either network will be fed; longer
    /// histories are truncated to their most recent `max_horizon` steps.
    pub max_horizon: usize,
    pub state_dim: usize,
    pub action_kind: ActionKind,
    /// Accepted for config completeness; must be zero (training never drops).
    pub dropout: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("embed_dim {dim} is not divisible by heads {heads}")]
    HeadSplit { dim: usize, heads: usize },
    #[error("{field} must be positive")]
    Zero { field: &'static str },
    #[error("dropout is fixed at 0; got {0}")]
    Dropout(f64),
}

impl ModelConfig {
    /// Config used by all shipped experiments; state/action dims still need
    /// to be set per environment.
    pub fn base(state_dim: usize, action_kind: ActionKind) -> Self {
        ModelConfig {
            embed_dim: 32,
            layers: 2,
            heads: 2,
            prompt_len: 4,
            max_horizon: 32,
            state_dim,
            action_kind,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("embed_dim", self.embed_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("prompt_len", self.prompt_len),
            ("max_horizon", self.max_horizon),
            ("state_dim", self.state_dim),
            ("action width", self.action_kind.width()),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero { field });
            }
        }
        if self.embed_dim % self.heads != 0 {
            return Err(ConfigError::HeadSplit {
                dim: self.embed_dim,
                heads: self.heads,
            });
        }
        if self.dropout != 0.0 {
            return Err(ConfigError::Dropout(self.dropout));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_config_is_valid() {
        let cfg = ModelConfig::base(2, ActionKind::Continuous { dim: 1 });
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.head_dim(), 16);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = ModelConfig::base(2, ActionKind::Discrete { cardinality: 3 });
        cfg.heads = 3;
        assert_eq!(
            cfg.validate(),
            Err(ConfigError::HeadSplit { dim: 32, heads: 3 })
        );
        cfg.heads = 2;
        cfg.state_dim = 0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Zero { .. })));
        cfg.state_dim = 2;
        cfg.dropout = 0.1;
        assert_eq!(cfg.validate(), Err(ConfigError::Dropout(0.1)));
    }
}
