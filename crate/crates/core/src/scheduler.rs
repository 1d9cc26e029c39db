//! Lockstep population driver.
//!
//! Every time step each learner `i` is placed in environment copy
//! `swap_assignment(i, t)`, acts, the copy steps, and the learner updates on
//! its own experience. Every `interval` steps the configured outer loop runs.
//! All randomness is drawn from streams labelled by `(trial, role, index)`:
//! learner streams follow the slot, environment streams follow the copy.

use serde::{Deserialize, Serialize};

use crate::env::{Action, ContentConfig, ContentRecState, RlEnvState, SlEnvState};
use crate::error::{Error, Result};
use crate::learners::{
    AccuracyMode, Learner, LearnerKind, MlpRecommender, ReinforcePolicy, ScalarPredictor, TabularQ,
};
use crate::meta::{
    init_hyper, pbt_step, rank_performance, reinforce_ol_step, LearnerSlot, MetaPerformance,
    OuterLoopConfig, OuterLoopKind, PerformanceKind, WindowEntry,
};
use crate::metrics::{concept_shift, covariate_shift_with, KlDirection};
use crate::mlp::MlpConfig;
use crate::numerics::log_uniform;
use crate::rng::{RngStream, Role, StreamId};

/// Learner-to-environment assignment. With swapping, learner `i` occupies
/// copy `(i + t) mod n` at step `t`; without, copy `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwapSchedule {
    pub enabled: bool,
    pub n: usize,
}

impl SwapSchedule {
    pub fn assignment(&self, i: usize, t: u64) -> Result<usize> {
        if i >= self.n {
            return Err(Error::Index {
                index: i,
                len: self.n,
            });
        }
        Ok(if self.enabled {
            ((i as u64 + t) % self.n as u64) as usize
        } else {
            i
        })
    }
}

pub fn swap_assignment(i: usize, t: u64, schedule: &SwapSchedule) -> Result<usize> {
    schedule.assignment(i, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Sl {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Rl {
        #[serde(default = "default_beta")]
        beta: f64,
        /// Fixed initial state for every copy; drawn uniformly when absent.
        #[serde(default)]
        start: Option<Action>,
    },
    Content(ContentConfig),
}

fn default_sigma() -> f64 {
    2.0
}

fn default_beta() -> f64 {
    -0.5
}

impl EnvConfig {
    pub fn label(&self) -> &'static str {
        match self {
            EnvConfig::Sl { .. } => "sl",
            EnvConfig::Rl { .. } => "rl",
            EnvConfig::Content(_) => "content",
        }
    }

    pub fn default_performance(&self) -> PerformanceKind {
        match self {
            EnvConfig::Sl { .. } => PerformanceKind::FinalStepNegLoss,
            EnvConfig::Rl { .. } => PerformanceKind::FinalStepReward,
            EnvConfig::Content(_) => PerformanceKind::IntervalAccuracy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrInit {
    Fixed { value: f64 },
    LogUniform { lo: f64, hi: f64 },
}

impl Default for LrInit {
    fn default() -> Self {
        LrInit::LogUniform { lo: 0.01, hi: 1.0 }
    }
}

impl LrInit {
    fn draw(&self, rng: &mut RngStream) -> f64 {
        match *self {
            LrInit::Fixed { value } => value,
            LrInit::LogUniform { lo, hi } if lo == 0.01 && hi == 1.0 => init_hyper(rng),
            LrInit::LogUniform { lo, hi } => log_uniform(lo, hi, rng),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LrInit::Fixed { value } if value >= 0.0 && value.is_finite() => Ok(()),
            LrInit::LogUniform { lo, hi } if lo > 0.0 && hi >= lo && hi.is_finite() => Ok(()),
            _ => Err(Error::config("learner.lr", "invalid learning-rate range")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub lr: LrInit,
    /// Momentum for the recommender's SGD.
    pub momentum: f64,
    /// Exploration rate for Q-learning.
    pub epsilon: f64,
    /// Seed Q-learning with one remembered defect transition.
    pub synthetic_memory: bool,
    pub mlp: MlpConfig,
    pub accuracy: AccuracyMode,
    /// Standard deviation of the initial REINFORCE parameter.
    pub theta_std: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Reinforce,
            lr: LrInit::default(),
            momentum: 0.9,
            epsilon: 0.1,
            synthetic_memory: false,
            mlp: MlpConfig::default(),
            accuracy: AccuracyMode::Sampled,
            theta_std: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub outer: OuterLoopConfig,
    pub population: usize,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trial: u64,
    #[serde(default)]
    pub swap: bool,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Overrides the environment's default outer-loop ranking.
    #[serde(default)]
    pub performance: Option<PerformanceKind>,
    /// Window (in steps) of the per-learner accuracy in drift records.
    #[serde(default = "default_accuracy_window")]
    pub accuracy_window: usize,
    /// Argument order of the covariate-shift KL divergence.
    #[serde(default)]
    pub kl_direction: KlDirection,
}

fn default_stride() -> usize {
    1
}

fn default_accuracy_window() -> usize {
    50
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::config("population", "must be >= 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be >= 1"));
        }
        if self.record_stride == 0 {
            return Err(Error::config("record_stride", "must be >= 1"));
        }
        if self.accuracy_window == 0 {
            return Err(Error::config("accuracy_window", "must be >= 1"));
        }
        self.outer.validate()?;
        if !self.steps.is_multiple_of(self.outer.interval) {
            return Err(Error::config(
                "steps",
                format!(
                    "{} is not divisible by interval {}",
                    self.steps, self.outer.interval
                ),
            ));
        }
        self.learner.lr.validate()?;
        match (&self.env, self.learner.kind) {
            (EnvConfig::Sl { sigma }, LearnerKind::Scalar) => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::config("env.sigma", "must be > 0"));
                }
            }
            (EnvConfig::Rl { beta, .. }, LearnerKind::Reinforce | LearnerKind::QLearning) => {
                if !beta.is_finite() {
                    return Err(Error::config("env.beta", "must be finite"));
                }
            }
            (EnvConfig::Content(c), LearnerKind::Recommender) => c.validate()?,
            (env, kind) => {
                return Err(Error::config(
                    "learner.kind",
                    format!("{kind:?} cannot run in the {} environment", env.label()),
                ))
            }
        }
        let pbt = matches!(
            self.outer.kind,
            OuterLoopKind::Pbt | OuterLoopKind::PbtExploitOnly
        );
        if pbt && self.population < 2 {
            return Err(Error::config("population", "PBT needs at least 2 learners"));
        }
        if self.outer.kind == OuterLoopKind::ReinforceOl
            && self.learner.kind != LearnerKind::Reinforce
        {
            return Err(Error::config(
                "outer.kind",
                "reinforce_ol needs reinforce learners",
            ));
        }
        if self.learner.kind == LearnerKind::QLearning
            && !(0.0..=1.0).contains(&self.learner.epsilon)
        {
            return Err(Error::config("learner.epsilon", "must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn performance_kind(&self) -> PerformanceKind {
        self.performance
            .unwrap_or_else(|| self.env.default_performance())
    }

    fn stream(&self, role: Role, index: usize) -> RngStream {
        RngStream::new(self.seed, StreamId::new(self.trial, role, index as u64))
    }
}

/// What a learner did in one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepAction {
    Rl(Action),
    /// `(y1_hat, y2_hat)` before the update.
    Sl(f64, f64),
    /// Recommended article and the user's click.
    Article {
        recommended: usize,
        click: usize,
    },
}

/// One trace row per (learner, step).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub trial: u64,
    pub t: u64,
    pub learner: usize,
    pub env: usize,
    pub action: StepAction,
    /// Reward (RL) or loss (supervised).
    pub reward: f64,
    pub correct: bool,
}

impl StepRecord {
    /// Per-kind scalar: cooperation flag (RL), `y2_hat` (SL), correctness
    /// (recommendation).
    pub fn extra(&self) -> f64 {
        match self.action {
            StepAction::Rl(a) => a.is_cooperate() as u8 as f64,
            StepAction::Sl(_, y2) => y2,
            StepAction::Article { .. } => self.correct as u8 as f64,
        }
    }
}

/// Drift of the environment copy a learner occupied, after the step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftRecord {
    pub trial: u64,
    pub t: u64,
    pub learner: usize,
    pub env: usize,
    /// Mean correctness over the learner's last `accuracy_window` steps.
    pub accuracy: f64,
    pub concept_shift: f64,
    pub covariate_shift: f64,
}

/// Receives trace rows as the trial runs.
pub trait RecordSink {
    fn step(&mut self, _record: &StepRecord) {}
    fn drift(&mut self, _record: &DriftRecord) {}
    fn outer(&mut self, _event: &OuterEvent) {}
}

impl RecordSink for () {}

/// An outer-loop step, for tracing.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterEvent {
    pub t: u64,
    pub performance: Vec<f64>,
    pub copies: Vec<(usize, usize)>,
}

/// Collects everything in memory.
#[derive(Clone, Debug, Default)]
pub struct TraceBuffer {
    pub steps: Vec<StepRecord>,
    pub drift: Vec<DriftRecord>,
    pub outer: Vec<OuterEvent>,
}

impl RecordSink for TraceBuffer {
    fn step(&mut self, record: &StepRecord) {
        self.steps.push(*record);
    }

    fn drift(&mut self, record: &DriftRecord) {
        self.drift.push(*record);
    }

    fn outer(&mut self, event: &OuterEvent) {
        self.outer.push(event.clone());
    }
}

/// End-of-trial state, independent of the record stride.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSummary {
    pub trial: u64,
    pub seed: u64,
    pub steps: usize,
    /// Population mean of the behaviour metric at every step: cooperation
    /// (RL), `y2_hat` (SL) or correctness (recommendation).
    pub behaviour: Vec<f64>,
    /// Per-learner mean of the behaviour metric over the final 10% of steps.
    pub final_behaviour: Vec<f64>,
    /// Final learner parameters.
    pub parameters: Vec<Vec<f64>>,
    /// Final learning rates (where applicable).
    pub hypers: Vec<Option<f64>>,
    /// Mean over environment copies of concept and covariate shift, per step
    /// (recommendation only).
    pub concept_shift: Vec<f64>,
    pub covariate_shift: Vec<f64>,
    /// Largest user-type probability, mean over copies, per step.
    pub max_user_prob: Vec<f64>,
}

impl TrialSummary {
    fn tail_start(&self) -> usize {
        self.steps - (self.steps / 10).max(1)
    }

    /// Population mean of the behaviour metric over the final 10% of steps.
    pub fn final_mean(&self) -> f64 {
        let tail = &self.behaviour[self.tail_start()..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Population mean of the behaviour metric over the last `steps` steps.
    pub fn tail_mean(&self, steps: usize) -> f64 {
        let tail = &self.behaviour[self.behaviour.len() - steps.clamp(1, self.behaviour.len())..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Mean of the behaviour metric over the whole run (area under the curve
    /// per step).
    pub fn behaviour_auc(&self) -> f64 {
        self.behaviour.iter().sum::<f64>() / self.behaviour.len() as f64
    }

    pub fn final_concept_shift(&self) -> Option<f64> {
        self.concept_shift.last().copied()
    }

    pub fn final_covariate_shift(&self) -> Option<f64> {
        self.covariate_shift.last().copied()
    }

    /// First step at which the mean largest user probability exceeds `level`.
    pub fn saturation_step(&self, level: f64) -> Option<usize> {
        self.max_user_prob.iter().position(|p| *p > level)
    }
}

enum Envs {
    Sl(Vec<SlEnvState>),
    Rl(Vec<RlEnvState>),
    Content {
        copies: Vec<ContentRecState>,
        g_init: Vec<f64>,
        w_init: Vec<f64>,
        n_articles: usize,
    },
}

/// A population and its environment copies, ready to step.
pub struct Trial {
    config: TrialConfig,
    slots: Vec<LearnerSlot>,
    envs: Envs,
    env_rngs: Vec<RngStream>,
    meta_rng: RngStream,
    schedule: SwapSchedule,
    /// Recent correctness per slot for drift accuracy.
    recent: Vec<std::collections::VecDeque<bool>>,
    t: u64,
}

impl Trial {
    pub fn new(config: TrialConfig) -> Result<Self> {
        let indices: Vec<usize> = (0..config.population).collect();
        Self::with_slots(config, &indices)
    }

    /// Builds a trial whose slots and environment copies carry the given
    /// stream indices. A single-index trial reproduces that member of a full
    /// population run when no outer loop couples the members.
    pub fn with_slots(config: TrialConfig, indices: &[usize]) -> Result<Self> {
        config.validate()?;
        let n = indices.len();
        if n == 0 {
            return Err(Error::config("population", "no slots"));
        }
        let capacity = config.outer.interval;
        let lc = config.learner;
        let slots = indices
            .iter()
            .map(|&i| {
                let mut init = config.stream(Role::LearnerInit, i);
                let mut hyper = config.stream(Role::Hyper, i);
                let lr = lc.lr.draw(&mut hyper);
                let learner = match (&config.env, lc.kind) {
                    (_, LearnerKind::Scalar) => Learner::Scalar(ScalarPredictor::new(lr)),
                    (_, LearnerKind::Reinforce) => {
                        Learner::Reinforce(ReinforcePolicy::new(init.normal(0.0, lc.theta_std), lr))
                    }
                    (_, LearnerKind::QLearning) => {
                        let mut q = TabularQ::new(lc.epsilon);
                        if lc.synthetic_memory {
                            q.init_synthetic()?;
                        }
                        Learner::QLearning(q)
                    }
                    (EnvConfig::Content(c), LearnerKind::Recommender) => {
                        Learner::Recommender(MlpRecommender::new(
                            c.n_users,
                            c.n_articles,
                            &lc.mlp,
                            lr,
                            lc.momentum,
                            &mut init,
                        ))
                    }
                    _ => unreachable!("validated"),
                };
                Ok(LearnerSlot::new(
                    i,
                    learner,
                    config.stream(Role::LearnerAct, i),
                    capacity,
                ))
            })
            .collect::<Result<Vec<_>>>()?;

        let env_rngs: Vec<RngStream> = indices
            .iter()
            .map(|&j| config.stream(Role::EnvStep, j))
            .collect();
        let envs = match config.env {
            EnvConfig::Sl { sigma } => Envs::Sl(
                indices
                    .iter()
                    .map(|&j| SlEnvState::reset(sigma, &mut config.stream(Role::EnvInit, j)))
                    .collect::<Result<_>>()?,
            ),
            EnvConfig::Rl { beta, start } => Envs::Rl(
                indices
                    .iter()
                    .map(|&j| match start {
                        Some(a) => RlEnvState::new(a, beta),
                        None => RlEnvState::reset(beta, &mut config.stream(Role::EnvInit, j)),
                    })
                    .collect(),
            ),
            EnvConfig::Content(c) => {
                // Every copy starts from the same world.
                let first = ContentRecState::reset(&c, &mut config.stream(Role::EnvInit, 0))?;
                Envs::Content {
                    g_init: first.g.clone(),
                    w_init: first.w.clone(),
                    n_articles: c.n_articles,
                    copies: vec![first; n],
                }
            }
        };
        Ok(Self {
            schedule: SwapSchedule {
                enabled: config.swap,
                n,
            },
            meta_rng: config.stream(Role::Meta, 0),
            recent: vec![Default::default(); n],
            config,
            slots,
            envs,
            env_rngs,
            t: 0,
        })
    }

    pub fn slots(&self) -> &[LearnerSlot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [LearnerSlot] {
        &mut self.slots
    }

    pub fn rl_states(&self) -> Option<&[RlEnvState]> {
        match &self.envs {
            Envs::Rl(v) => Some(v),
            _ => None,
        }
    }

    pub fn rl_states_mut(&mut self) -> Option<&mut [RlEnvState]> {
        match &mut self.envs {
            Envs::Rl(v) => Some(v),
            _ => None,
        }
    }

    pub fn content_states(&self) -> Option<&[ContentRecState]> {
        match &self.envs {
            Envs::Content { copies, .. } => Some(copies),
            _ => None,
        }
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    /// Runs one inner step for every learner; returns the records in learner
    /// order. Runs the outer loop afterwards if an interval just ended.
    pub fn step(&mut self, sink: &mut impl RecordSink) -> Result<Vec<StepRecord>> {
        let t = self.t;
        let n = self.slots.len();
        let mut records = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        for i in 0..n {
            let j = self.schedule.assignment(i, t)?;
            debug_assert!(!seen[j], "assignment is not a permutation at t = {t}");
            seen[j] = true;
            let record = self.step_pair(i, j)?;
            records.push(record);
        }

        let emit = t.is_multiple_of(self.config.record_stride as u64);
        for r in &records {
            if emit {
                sink.step(r);
            }
        }
        if let Envs::Content { .. } = self.envs {
            let window = self.config.accuracy_window;
            for r in &records {
                let recent = &mut self.recent[r.learner];
                if recent.len() == window {
                    recent.pop_front();
                }
                recent.push_back(r.correct);
            }
            if emit {
                for r in &records {
                    let d = self.drift_of(r)?;
                    sink.drift(&d);
                }
            }
        }

        self.t += 1;
        if self.t.is_multiple_of(self.config.outer.interval as u64) {
            self.outer_step(sink)?;
        }
        Ok(records)
    }

    fn drift_of(&self, r: &StepRecord) -> Result<DriftRecord> {
        let Envs::Content {
            copies,
            g_init,
            w_init,
            n_articles,
        } = &self.envs
        else {
            unreachable!()
        };
        let env = &copies[r.env];
        let recent = &self.recent[r.learner];
        Ok(DriftRecord {
            trial: self.config.trial,
            t: r.t,
            learner: r.learner,
            env: r.env,
            accuracy: recent.iter().filter(|c| **c).count() as f64 / recent.len() as f64,
            concept_shift: concept_shift(w_init, &env.w, *n_articles)?,
            covariate_shift: covariate_shift_with(g_init, &env.g, self.config.kl_direction)?,
        })
    }

    fn step_pair(&mut self, i: usize, j: usize) -> Result<StepRecord> {
        let trial = self.config.trial;
        let t = self.t;
        let accuracy = self.config.learner.accuracy;
        let slot = &mut self.slots[i];
        let env_rng = &mut self.env_rngs[j];
        let (action, reward, correct, entry_action) = match (&mut self.envs, &mut slot.learner) {
            (Envs::Rl(states), Learner::Reinforce(policy)) => {
                let a = policy.act(&mut slot.rng);
                let (r, next) = states[j].step(a);
                states[j] = next;
                policy.learn(a, r);
                (StepAction::Rl(a), r, false, Some(a))
            }
            (Envs::Rl(states), Learner::QLearning(q)) => {
                let a = q.act(&mut slot.rng);
                let (r, next) = states[j].step(a);
                states[j] = next;
                q.learn(a, r);
                (StepAction::Rl(a), r, false, Some(a))
            }
            (Envs::Sl(states), Learner::Scalar(p)) => {
                let pred = p.predict();
                let out = states[j].step(pred, env_rng);
                states[j] = out.next;
                p.learn(out.targets);
                (
                    StepAction::Sl(pred.y1_hat, pred.y2_hat),
                    out.loss,
                    false,
                    None,
                )
            }
            (Envs::Content { copies, .. }, Learner::Recommender(rec)) => {
                let env = &mut copies[j];
                let user = env.x;
                let recommended = rec.act(user, &mut slot.rng)?;
                let out = env.step(recommended, env_rng)?;
                let o = rec.learn(user, out.click, recommended, accuracy)?;
                (
                    StepAction::Article {
                        recommended,
                        click: out.click,
                    },
                    o.loss,
                    o.correct,
                    None,
                )
            }
            _ => unreachable!("validated"),
        };
        slot.push(WindowEntry {
            value: reward,
            correct,
            action: entry_action,
        });
        Ok(StepRecord {
            trial,
            t,
            learner: i,
            env: j,
            action,
            reward,
            correct,
        })
    }

    fn outer_step(&mut self, sink: &mut impl RecordSink) -> Result<()> {
        let kind = self.config.performance_kind();
        let outer = self.config.outer;
        let event = match outer.kind {
            OuterLoopKind::None => None,
            OuterLoopKind::Pbt | OuterLoopKind::PbtExploitOnly => {
                let perfs = self
                    .slots
                    .iter()
                    .map(|s| rank_performance(&s.window(), kind))
                    .collect::<Result<Vec<MetaPerformance>>>()?;
                let report = pbt_step(
                    &mut self.slots,
                    &perfs,
                    &outer,
                    outer.kind == OuterLoopKind::PbtExploitOnly,
                    &mut self.meta_rng,
                )?;
                Some(OuterEvent {
                    t: self.t,
                    performance: perfs.iter().map(|p| p.value).collect(),
                    copies: report.copies,
                })
            }
            OuterLoopKind::ReinforceOl => {
                let mut performance = Vec::with_capacity(self.slots.len());
                for slot in self.slots.iter_mut() {
                    let window = slot.window();
                    performance.push(window.iter().map(|e| e.value).sum());
                    reinforce_ol_step(slot, &window, outer.ol_lr)?;
                }
                Some(OuterEvent {
                    t: self.t,
                    performance,
                    copies: Vec::new(),
                })
            }
        };
        for slot in self.slots.iter_mut() {
            slot.clear_window();
        }
        if let Some(e) = event {
            sink.outer(&e);
        }
        Ok(())
    }

    fn env_snapshot(&self) -> (f64, f64, f64) {
        match &self.envs {
            Envs::Content {
                copies,
                g_init,
                w_init,
                n_articles,
            } => {
                let n = copies.len() as f64;
                let mut concept = 0.0;
                let mut covariate = 0.0;
                let mut max_p = 0.0;
                for env in copies {
                    concept += concept_shift(w_init, &env.w, *n_articles).unwrap_or(f64::NAN);
                    covariate += covariate_shift_with(g_init, &env.g, self.config.kl_direction)
                        .unwrap_or(f64::NAN);
                    max_p += env.user_distribution().into_iter().fold(0.0, f64::max);
                }
                (concept / n, covariate / n, max_p / n)
            }
            _ => (0.0, 0.0, 0.0),
        }
    }
}

/// Runs a trial to completion, streaming records into `sink`.
pub fn run_trial(config: &TrialConfig, sink: &mut impl RecordSink) -> Result<TrialSummary> {
    let mut trial = Trial::new(config.clone())?;
    run_to_end(&mut trial, sink)
}

/// Runs an already-built trial to completion.
pub fn run_to_end(trial: &mut Trial, sink: &mut impl RecordSink) -> Result<TrialSummary> {
    let steps = trial.config.steps;
    let n = trial.slots.len();
    let tail_start = steps - (steps / 10).max(1);
    let is_content = matches!(trial.envs, Envs::Content { .. });

    let mut behaviour = Vec::with_capacity(steps);
    let mut tail_sum = vec![0.0; n];
    let mut concept = Vec::new();
    let mut covariate = Vec::new();
    let mut max_user_prob = Vec::new();

    while (trial.t as usize) < steps {
        let t = trial.t as usize;
        let records = trial.step(sink)?;
        let mut total = 0.0;
        for r in &records {
            let b = r.extra();
            total += b;
            if t >= tail_start {
                tail_sum[r.learner] += b;
            }
        }
        behaviour.push(total / n as f64);
        if is_content {
            let (c, v, m) = trial.env_snapshot();
            concept.push(c);
            covariate.push(v);
            max_user_prob.push(m);
        }
    }
    let tail_len = (steps - tail_start) as f64;
    Ok(TrialSummary {
        trial: trial.config.trial,
        seed: trial.config.seed,
        steps,
        behaviour,
        final_behaviour: tail_sum.into_iter().map(|s| s / tail_len).collect(),
        parameters: trial.slots.iter().map(|s| s.learner.parameters()).collect(),
        hypers: trial.slots.iter().map(|s| s.hyper()).collect(),
        concept_shift: concept,
        covariate_shift: covariate,
        max_user_prob,
    })
}

/// Summaries and traces of a matched baseline / PBT pair.
#[derive(Clone, Debug)]
pub struct MatchedPair {
    pub baseline: (TrialSummary, TraceBuffer),
    pub treated: (TrialSummary, TraceBuffer),
}

/// Runs `config` twice: once with the outer loop disabled and once as given.
/// Environment and learner streams are shared; only outer-loop randomness
/// differs.
pub fn run_matched_pair(config: &TrialConfig) -> Result<MatchedPair> {
    if !matches!(config.env, EnvConfig::Content(_)) {
        return Err(Error::config(
            "env.kind",
            "matched pairs are run on content recommendation",
        ));
    }
    let baseline_config = TrialConfig {
        outer: OuterLoopConfig {
            kind: OuterLoopKind::None,
            ..config.outer
        },
        ..config.clone()
    };
    let mut base_trace = TraceBuffer::default();
    let baseline = run_trial(&baseline_config, &mut base_trace)?;
    let mut treated_trace = TraceBuffer::default();
    let treated = run_trial(config, &mut treated_trace)?;
    Ok(MatchedPair {
        baseline: (baseline, base_trace),
        treated: (treated, treated_trace),
    })
}
