use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Cooperate,
    Defect,
}

impl Action {
    pub fn is_cooperate(self) -> bool {
        self == Action::Cooperate
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Action::Cooperate => "C",
            Action::Defect => "D",
        }
    }

    pub const ALL: [Action; 2] = [Action::Cooperate, Action::Defect];
}

/// `I(s = C) + beta * I(a = C) - 1/2`.
pub fn rl_reward(state: Action, action: Action, beta: f64) -> f64 {
    let s = if state.is_cooperate() { 1.0 } else { 0.0 };
    let a = if action.is_cooperate() { 1.0 } else { 0.0 };
    s + beta * a - 0.5
}

/// The state is the previous action taken in this environment copy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlEnvState {
    pub prev_action: Action,
    pub beta: f64,
}

impl RlEnvState {
    pub fn new(prev_action: Action, beta: f64) -> Self {
        Self { prev_action, beta }
    }

    /// Initial state drawn uniformly from {C, D}.
    pub fn reset(beta: f64, rng: &mut RngStream) -> Self {
        let prev_action = if rng.bernoulli(0.5) {
            Action::Cooperate
        } else {
            Action::Defect
        };
        Self { prev_action, beta }
    }

    /// Deterministic transition: the next state is the action just taken.
    pub fn step(self, action: Action) -> (f64, Self) {
        let reward = rl_reward(self.prev_action, action, self.beta);
        (
            reward,
            Self {
                prev_action: action,
                ..self
            },
        )
    }
}
