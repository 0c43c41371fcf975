//! Flattening of trajectories into model token sequences.
//!
//! A trajectory becomes one token per state, action, and reward, interleaved
//! in experienced order: `s_0 a_0 r_0 s_1 a_1 r_1 …`. A trailing state (one
//! awaiting its action during a rollout, or a fragment's successor state) gets
//! its own final state token. Every token carries the index of the step it
//! belongs to; histories longer than the model horizon are truncated to their
//! most recent steps and step indices are re-based so the oldest kept step is
//! index 0.

use crate::model::ModelConfig;
use crate::traj::{StepAction, Trajectory};

/// Token kind, also the row index into the modality embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    State = 0,
    Action = 1,
    Reward = 2,
    Sep = 3,
}

pub const MODALITY_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenValue {
    State(Vec<f64>),
    ContAction(Vec<f64>),
    DiscAction(usize),
    Reward(f64),
    /// Learned separator between a context trajectory and the main one.
    Sep,
}

impl TokenValue {
    pub fn modality(&self) -> Modality {
        match self {
            TokenValue::State(_) => Modality::State,
            TokenValue::ContAction(_) | TokenValue::DiscAction(_) => Modality::Action,
            TokenValue::Reward(_) => Modality::Reward,
            TokenValue::Sep => Modality::Sep,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub value: TokenValue,
    /// Step index within the (truncated) trajectory the token came from.
    pub time: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Kept portion of a trajectory after horizon truncation: the step range
/// `[base, base + steps)` plus whether the trailing state is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Kept {
    pub base: usize,
    pub steps: usize,
    pub trailing_state: bool,
}

pub(crate) fn kept_window(traj: &Trajectory, max_horizon: usize) -> Kept {
    let n = traj.steps();
    let steps = n.min(max_horizon);
    Kept {
        base: n - steps,
        steps,
        trailing_state: traj.has_trailing_state(),
    }
}

fn push_trajectory(out: &mut Vec<Token>, traj: &Trajectory, max_horizon: usize) {
    let kept = kept_window(traj, max_horizon);
    for i in 0..kept.steps {
        let t = kept.base + i;
        out.push(Token {
            value: TokenValue::State(traj.states[t].clone()),
            time: i,
        });
        let action = match traj.actions.get(t) {
            StepAction::Continuous(v) => TokenValue::ContAction(v),
            StepAction::Discrete(k) => TokenValue::DiscAction(k),
        };
        out.push(Token {
            value: action,
            time: i,
        });
        out.push(Token {
            value: TokenValue::Reward(traj.rewards[t]),
            time: i,
        });
    }
    if kept.trailing_state {
        out.push(Token {
            value: TokenValue::State(traj.states[kept.base + kept.steps].clone()),
            time: kept.steps,
        });
    }
}

/// Encoder input: optional context trajectory, a separator, then the main
/// trajectory. Both parts are truncated and re-based independently.
pub fn encoder_tokens(
    cfg: &ModelConfig,
    ctx: Option<&Trajectory>,
    traj: &Trajectory,
) -> TokenSequence {
    let mut tokens = Vec::new();
    if let Some(ctx) = ctx {
        push_trajectory(&mut tokens, ctx, cfg.max_horizon);
        tokens.push(Token {
            value: TokenValue::Sep,
            time: 0,
        });
    }
    push_trajectory(&mut tokens, traj, cfg.max_horizon);
    TokenSequence { tokens }
}

/// Generator input: the main trajectory only. The prompt prefix is attached
/// by the generator itself, not represented as tokens.
pub fn generator_tokens(cfg: &ModelConfig, traj: &Trajectory) -> TokenSequence {
    let mut tokens = Vec::new();
    push_trajectory(&mut tokens, traj, cfg.max_horizon);
    TokenSequence { tokens }
}
