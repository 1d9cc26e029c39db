//! Outer loops run every `interval` inner steps: population-based training
//! (EXPLOIT with optional EXPLORE), a REINFORCE outer loop over the summed
//! reward of the interval, and a no-op baseline.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::learners::Learner;
use crate::numerics::log_uniform;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterLoopKind {
    #[default]
    None,
    Pbt,
    PbtExploitOnly,
    ReinforceOl,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterLoopConfig {
    pub kind: OuterLoopKind,
    pub interval: usize,
    pub exploit_fraction: f64,
    pub perturb_factors: [f64; 2],
    pub ol_lr: f64,
}

impl Default for OuterLoopConfig {
    fn default() -> Self {
        Self {
            kind: OuterLoopKind::None,
            interval: 1,
            exploit_fraction: 0.2,
            perturb_factors: [0.8, 1.2],
            ol_lr: 1.0,
        }
    }
}

impl OuterLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::config("outer.interval", "must be >= 1"));
        }
        if !(self.exploit_fraction > 0.0 && self.exploit_fraction <= 0.5) {
            return Err(Error::config(
                "outer.exploit_fraction",
                "must be in (0, 0.5]",
            ));
        }
        if self
            .perturb_factors
            .iter()
            .any(|f| !(*f > 0.0 && f.is_finite()))
        {
            return Err(Error::config("outer.perturb_factors", "must be positive"));
        }
        if !self.ol_lr.is_finite() {
            return Err(Error::config("outer.ol_lr", "must be finite"));
        }
        Ok(())
    }

    /// Number of slots replaced per EXPLOIT step.
    pub fn exploit_count(&self, n: usize) -> usize {
        ((self.exploit_fraction * n as f64).floor() as usize).max(1)
    }
}

/// What the outer loop ranks learners by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceKind {
    FinalStepReward,
    FinalStepNegLoss,
    IntervalAccuracy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaPerformance {
    pub value: f64,
    pub kind: PerformanceKind,
}

/// The part of a step the outer loops look at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowEntry {
    /// Reward (RL) or loss (supervised).
    pub value: f64,
    pub correct: bool,
    pub action: Option<Action>,
}

/// One population member. The random stream belongs to the slot and is never
/// copied by EXPLOIT.
#[derive(Clone, Debug)]
pub struct LearnerSlot {
    pub index: usize,
    pub learner: Learner,
    pub rng: RngStream,
    window: VecDeque<WindowEntry>,
    capacity: usize,
}

impl LearnerSlot {
    pub fn new(index: usize, learner: Learner, rng: RngStream, capacity: usize) -> Self {
        Self {
            index,
            learner,
            rng,
            window: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn hyper(&self) -> Option<f64> {
        self.learner.hyper()
    }

    pub fn push(&mut self, entry: WindowEntry) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(entry);
    }

    pub fn window(&self) -> Vec<WindowEntry> {
        self.window.iter().copied().collect()
    }

    pub fn clear_window(&mut self) {
        self.window.clear();
    }
}

pub fn rank_performance(window: &[WindowEntry], kind: PerformanceKind) -> Result<MetaPerformance> {
    let last = window
        .last()
        .ok_or_else(|| Error::State("empty performance window".into()))?;
    let value = match kind {
        PerformanceKind::FinalStepReward => last.value,
        PerformanceKind::FinalStepNegLoss => -last.value,
        PerformanceKind::IntervalAccuracy => {
            window.iter().filter(|e| e.correct).count() as f64 / window.len() as f64
        }
    };
    Ok(MetaPerformance { value, kind })
}

/// Learning rate drawn log-uniformly from `[0.01, 1]`.
pub fn init_hyper(rng: &mut RngStream) -> f64 {
    log_uniform(0.01, 1.0, rng)
}

/// What one PBT step did, for tracing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PbtReport {
    /// `(destination slot, donor slot)` pairs.
    pub copies: Vec<(usize, usize)>,
    /// Slot indices from best to worst.
    pub ranking: Vec<usize>,
}

/// EXPLOIT, then (unless `exploit_only`) EXPLORE.
///
/// Ties in performance are broken uniformly at random. Each of the bottom `k`
/// slots receives a copy of the learner (parameters and learning rate) of a
/// donor drawn uniformly from the top `k`. EXPLORE multiplies every learning
/// rate by a factor drawn uniformly from `perturb_factors`.
pub fn pbt_step(
    population: &mut [LearnerSlot],
    perfs: &[MetaPerformance],
    config: &OuterLoopConfig,
    exploit_only: bool,
    rng: &mut RngStream,
) -> Result<PbtReport> {
    let n = population.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "PBT needs at least 2 learners, got {n}"
        )));
    }
    if perfs.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: perfs.len(),
        });
    }
    let k = config.exploit_count(n);

    let mut ranking: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut ranking);
    ranking.sort_by(|a, b| perfs[*b].value.total_cmp(&perfs[*a].value));

    let mut copies = Vec::with_capacity(k);
    for &dst in &ranking[n - k..] {
        let donor = ranking[rng.below(k)];
        copies.push((dst, donor));
    }
    for &(dst, donor) in &copies {
        population[dst].learner = population[donor].learner.clone();
    }

    if !exploit_only {
        explore(population, config, rng);
    }
    Ok(PbtReport { copies, ranking })
}

fn explore(population: &mut [LearnerSlot], config: &OuterLoopConfig, rng: &mut RngStream) {
    for slot in population.iter_mut() {
        let factor = config.perturb_factors[rng.below(2)];
        if let Some(lr) = slot.learner.hyper() {
            slot.learner.set_hyper(lr * factor);
        }
    }
}

/// `theta += ol_lr * (sum of window rewards) * sum_t grad log pi(a_t)`,
/// with the score evaluated at the current `theta`.
pub fn reinforce_ol_step(slot: &mut LearnerSlot, window: &[WindowEntry], ol_lr: f64) -> Result<()> {
    let Learner::Reinforce(policy) = &mut slot.learner else {
        return Err(Error::InvalidArgument(format!(
            "REINFORCE outer loop needs a reinforce learner, slot {} holds {:?}",
            slot.index,
            slot.learner.kind()
        )));
    };
    let ret: f64 = window.iter().map(|e| e.value).sum();
    let mut score = 0.0;
    for entry in window {
        let action = entry
            .action
            .ok_or_else(|| Error::State("window entry without an action".into()))?;
        score += policy.grad_log_prob(action);
    }
    policy.theta += ol_lr * ret * score;
    Ok(())
}
