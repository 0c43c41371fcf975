//! Plain trajectory containers shared by the model, losses, environments,
//! and pipeline.

/// One action taken at a single step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepAction {
    Continuous(Vec<f64>),
    Discrete(usize),
}

/// Per-step actions for a whole trajectory; all steps share one kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Actions {
    Continuous(Vec<Vec<f64>>),
    Discrete(Vec<usize>),
}

impl Actions {
    pub fn len(&self) -> usize {
        match self {
            Actions::Continuous(v) => v.len(),
            Actions::Discrete(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, a: StepAction) {
        match (self, a) {
            (Actions::Continuous(v), StepAction::Continuous(a)) => v.push(a),
            (Actions::Discrete(v), StepAction::Discrete(a)) => v.push(a),
            _ => panic!("mixed action kinds in one trajectory"),
        }
    }

    pub fn get(&self, i: usize) -> StepAction {
        match self {
            Actions::Continuous(v) => StepAction::Continuous(v[i].clone()),
            Actions::Discrete(v) => StepAction::Discrete(v[i]),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Actions {
        match self {
            Actions::Continuous(v) => Actions::Continuous(v[start..end].to_vec()),
            Actions::Discrete(v) => Actions::Discrete(v[start..end].to_vec()),
        }
    }
}

/// A (state, action, reward) sequence.
///
/// `complete steps` means full (s, a, r) triples. `states` holds either
/// exactly one state per step, or one extra trailing state: the trailing
/// state is the successor of the final step (training fragments carry it as
/// a prediction target) or the current not-yet-acted-on state (rollout
/// prefixes carry it so the next action can be queried).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Actions,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn empty_continuous() -> Self {
        Trajectory {
            states: Vec::new(),
            actions: Actions::Continuous(Vec::new()),
            rewards: Vec::new(),
        }
    }

    pub fn empty_discrete() -> Self {
        Trajectory {
            states: Vec::new(),
            actions: Actions::Discrete(Vec::new()),
            rewards: Vec::new(),
        }
    }

    /// Number of complete (s, a, r) steps.
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn has_trailing_state(&self) -> bool {
        self.states.len() == self.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Sum of rewards.
    pub fn ret(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Structural sanity: rewards match actions, and states cover each step
    /// with at most one trailing extra.
    pub fn is_well_formed(&self) -> bool {
        let n = self.steps();
        self.rewards.len() == n && (self.states.len() == n || self.states.len() == n + 1)
    }

    /// Copy of the `len` steps starting at `start`, including the state after
    /// the last one (so the fragment keeps its successor target).
    pub fn fragment(&self, start: usize, len: usize) -> Trajectory {
        assert!(
            start + len <= self.steps() && start + len < self.states.len(),
            "fragment [{start}, {start}+{len}) out of range for {} steps",
            self.steps()
        );
        Trajectory {
            states: self.states[start..=start + len].to_vec(),
            actions: self.actions.slice(start, start + len),
            rewards: self.rewards[start..start + len].to_vec(),
        }
    }

    /// Copy without the trailing state, if any: the exact tokens a causal
    /// consumer should see when every step is complete.
    pub fn body(&self) -> Trajectory {
        Trajectory {
            states: self.states[..self.steps()].to_vec(),
            actions: self.actions.clone(),
            rewards: self.rewards.clone(),
        }
    }
}
