//! Inner-loop learners.
//!
//! Each learner owns its parameters and (where it has one) its learning rate,
//! which is the hyperparameter the outer loops tune. Randomness always comes
//! from a caller-supplied stream so that a learner copied by the outer loop
//! keeps drawing from the slot it was copied into.

use serde::{Deserialize, Serialize};

use crate::env::{Action, SlPrediction};
use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpConfig};
use crate::numerics::{argmax, draw_categorical, sigmoid};
use crate::rng::RngStream;

/// Learns the two predictions directly as parameters by SGD on
/// `((y1_hat - y1)^2 + (y2_hat - y2)^2) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarPredictor {
    pub y1_hat: f64,
    pub y2_hat: f64,
    pub lr: f64,
}

impl ScalarPredictor {
    pub fn new(lr: f64) -> Self {
        Self {
            y1_hat: 0.0,
            y2_hat: 0.0,
            lr,
        }
    }

    pub fn predict(&self) -> SlPrediction {
        SlPrediction {
            y1_hat: self.y1_hat,
            y2_hat: self.y2_hat,
        }
    }

    pub fn learn(&mut self, targets: (f64, f64)) {
        self.y1_hat -= self.lr * (self.y1_hat - targets.0);
        self.y2_hat -= self.lr * (self.y2_hat - targets.1);
    }
}

/// Bernoulli policy with `P(defect) = sigmoid(theta)`, trained by REINFORCE
/// with zero discount and no baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ReinforcePolicy {
    pub theta: f64,
    pub lr: f64,
}

impl ReinforcePolicy {
    pub fn new(theta: f64, lr: f64) -> Self {
        Self { theta, lr }
    }

    /// `theta ~ Normal(0, 1)`.
    pub fn init(lr: f64, rng: &mut RngStream) -> Self {
        Self::new(rng.normal(0.0, 1.0), lr)
    }

    pub fn p_defect(&self) -> f64 {
        sigmoid(self.theta)
    }

    pub fn act(&self, rng: &mut RngStream) -> Action {
        if rng.uniform() < self.p_defect() {
            Action::Defect
        } else {
            Action::Cooperate
        }
    }

    /// `d/dtheta log pi(action)`.
    pub fn grad_log_prob(&self, action: Action) -> f64 {
        let p = self.p_defect();
        match action {
            Action::Defect => 1.0 - p,
            Action::Cooperate => -p,
        }
    }

    pub fn learn(&mut self, action: Action, reward: f64) {
        self.theta += self.lr * reward * self.grad_log_prob(action);
    }
}

/// State-agnostic action values estimated by sample averages, acting
/// epsilon-greedily with uniform tie breaking.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularQ {
    /// Indexed by [`q_index`]: cooperate, defect.
    pub q: [f64; 2],
    pub counts: [u64; 2],
    pub epsilon: f64,
    synthetic: bool,
}

pub fn q_index(action: Action) -> usize {
    match action {
        Action::Cooperate => 0,
        Action::Defect => 1,
    }
}

impl TabularQ {
    pub fn new(epsilon: f64) -> Self {
        Self {
            q: [0.0; 2],
            counts: [0; 2],
            epsilon,
            synthetic: false,
        }
    }

    /// Seeds the estimates with one remembered (defect, defect) transition,
    /// i.e. a single defect sample of reward -0.5.
    pub fn init_synthetic(&mut self) -> Result<()> {
        if self.synthetic || self.counts != [0, 0] {
            return Err(Error::State(
                "synthetic memory can only seed a fresh learner".into(),
            ));
        }
        self.synthetic = true;
        self.counts[q_index(Action::Defect)] = 1;
        self.q[q_index(Action::Defect)] = -0.5;
        Ok(())
    }

    pub fn greedy(&self, rng: &mut RngStream) -> Action {
        let (c, d) = (self.q[0], self.q[1]);
        if c > d {
            Action::Cooperate
        } else if d > c {
            Action::Defect
        } else if rng.bernoulli(0.5) {
            Action::Cooperate
        } else {
            Action::Defect
        }
    }

    pub fn act(&self, rng: &mut RngStream) -> Action {
        if rng.uniform() < self.epsilon {
            if rng.bernoulli(0.5) {
                Action::Cooperate
            } else {
                Action::Defect
            }
        } else {
            self.greedy(rng)
        }
    }

    pub fn learn(&mut self, action: Action, reward: f64) {
        let i = q_index(action);
        self.counts[i] += 1;
        self.q[i] += (reward - self.q[i]) / self.counts[i] as f64;
    }
}

/// How a recommender's prediction is scored against the click.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// The sampled recommendation must equal the click.
    #[default]
    Sampled,
    /// The arg-max of the predictive distribution must equal the click.
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpRecommender {
    pub net: Mlp,
    pub lr: f64,
    pub momentum: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecommenderOutcome {
    pub loss: f64,
    pub correct: bool,
}

impl MlpRecommender {
    pub fn new(
        n_users: usize,
        n_articles: usize,
        config: &MlpConfig,
        lr: f64,
        momentum: f64,
        rng: &mut RngStream,
    ) -> Self {
        Self {
            net: Mlp::new(n_users, n_articles, config, rng),
            lr,
            momentum,
        }
    }

    pub fn act(&self, user: usize, rng: &mut RngStream) -> Result<usize> {
        let p = self.net.forward_at(user)?;
        Ok(draw_categorical(&p, rng.uniform()))
    }

    /// Scores `recommended` (or the greedy choice) against `click`, then takes
    /// one momentum-SGD step on the cross-entropy of the click.
    pub fn learn(
        &mut self,
        user: usize,
        click: usize,
        recommended: usize,
        mode: AccuracyMode,
    ) -> Result<RecommenderOutcome> {
        let correct = match mode {
            AccuracyMode::Sampled => recommended == click,
            AccuracyMode::Greedy => argmax(&self.net.forward_at(user)?) == click,
        };
        let loss = self.net.update_at(user, click, self.lr, self.momentum)?;
        Ok(RecommenderOutcome { loss, correct })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Scalar,
    Reinforce,
    QLearning,
    Recommender,
}

/// Any of the four learners, as held by a population slot.
#[derive(Clone, Debug, PartialEq)]
pub enum Learner {
    Scalar(ScalarPredictor),
    Reinforce(ReinforcePolicy),
    QLearning(TabularQ),
    Recommender(MlpRecommender),
}

impl Learner {
    pub fn kind(&self) -> LearnerKind {
        match self {
            Learner::Scalar(_) => LearnerKind::Scalar,
            Learner::Reinforce(_) => LearnerKind::Reinforce,
            Learner::QLearning(_) => LearnerKind::QLearning,
            Learner::Recommender(_) => LearnerKind::Recommender,
        }
    }

    /// Learning rate, if the learner has one.
    pub fn hyper(&self) -> Option<f64> {
        match self {
            Learner::Scalar(l) => Some(l.lr),
            Learner::Reinforce(l) => Some(l.lr),
            Learner::QLearning(_) => None,
            Learner::Recommender(l) => Some(l.lr),
        }
    }

    pub fn set_hyper(&mut self, lr: f64) {
        match self {
            Learner::Scalar(l) => l.lr = lr,
            Learner::Reinforce(l) => l.lr = lr,
            Learner::QLearning(_) => {}
            Learner::Recommender(l) => l.lr = lr,
        }
    }

    /// Parameters only (no hyperparameters), flattened.
    pub fn parameters(&self) -> Vec<f64> {
        match self {
            Learner::Scalar(l) => vec![l.y1_hat, l.y2_hat],
            Learner::Reinforce(l) => vec![l.theta],
            Learner::QLearning(l) => vec![l.q[0], l.q[1], l.counts[0] as f64, l.counts[1] as f64],
            Learner::Recommender(l) => l.net.parameters(),
        }
    }
}
