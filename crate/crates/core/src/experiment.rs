//! Declarative experiments: a base trial, optional sweep axes and a number of
//! seeds, executed on a worker pool and written to a run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.toml          config hash, seeds, code version, per-trial errors
//! summary.csv            one row per (sweep point, seed)
//! failure_rates.csv      sweeps only; one row per sweep point
//! point-NNN/steps.csv    step trace of every seed at that point
//! point-NNN/drift.csv    drift trace (content recommendation)
//! point-NNN/outer.csv    EXPLOIT copies, when `record_outer` is set
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learners::{Learner, LearnerKind};
use crate::meta::OuterLoopKind;
use crate::numerics::{mean, std_error};
use crate::recorder::{
    write_chunks, write_rows, Chunks, CsvSink, DRIFT_HEADER, OUTER_HEADER, STEPS_HEADER,
};
use crate::scheduler::{run_to_end, EnvConfig, Trial, TrialConfig, TrialSummary};

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../presets/", $name, ".toml")))),*]
    };
}

/// Shipped experiment configs, by name.
pub const PRESETS: &[(&str, &str)] = presets![
    "sl-baseline",
    "sl-pbt",
    "rl-baseline",
    "rl-pbt",
    "rl-pbt-swap",
    "rl-reinforce-ol",
    "rl-qlearning",
    "rl-qlearning-long",
    "rl-qlearning-swap",
    "rl-beta-sweep",
    "contentrec-pair",
    "contentrec-swap",
    "contentrec-alpha-grid",
    "pbt-walkthrough",
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        Error::config(
            "preset",
            format!("unknown preset `{name}`; available: {}", names.join(", ")),
        )
    })?;
    ExperimentConfig::from_toml(text)
}

/// Scripted starting conditions applied after the population is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Every REINFORCE policy is pinned to cooperate (`theta = -50`) except
    /// the first, which defects (`theta = +50`).
    PbtWalkthrough,
}

pub const WALKTHROUGH_THETA: f64 = 50.0;

impl Scenario {
    fn validate(&self, trial: &TrialConfig) -> Result<()> {
        match self {
            Scenario::PbtWalkthrough => {
                if trial.learner.kind != LearnerKind::Reinforce {
                    return Err(Error::config(
                        "scenario",
                        "pbt_walkthrough needs reinforce learners",
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, trial: &mut Trial) {
        match self {
            Scenario::PbtWalkthrough => {
                for slot in trial.slots_mut() {
                    if let Learner::Reinforce(p) = &mut slot.learner {
                        p.theta = if slot.index == 0 {
                            WALKTHROUGH_THETA
                        } else {
                            -WALKTHROUGH_THETA
                        };
                    }
                }
            }
        }
    }
}

/// Values to sweep. Absent axes keep the base trial's value; the product is
/// taken in field order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<Vec<OuterLoopKind>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub populations: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub swap: Option<Vec<bool>>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self == &SweepAxes::default()
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default = "one")]
    pub n_seeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Window for `tail_behaviour` in the summary; defaults to the final 10%.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    /// Write every EXPLOIT copy to `outer.csv`.
    #[serde(default)]
    pub record_outer: bool,
    pub trial: TrialConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::State(format!("serializing config: {e}")))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::ConfigParse(m) => Error::ConfigParse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "must be >= 1"));
        }
        if let Some(tail) = self.tail_steps {
            if tail == 0 || tail > self.trial.steps {
                return Err(Error::config("tail_steps", "must be in [1, trial.steps]"));
            }
        }
        let axes = &self.sweep;
        let lens = [
            ("sweep.outer", axes.outer.as_ref().map(Vec::len)),
            ("sweep.populations", axes.populations.as_ref().map(Vec::len)),
            ("sweep.intervals", axes.intervals.as_ref().map(Vec::len)),
            ("sweep.betas", axes.betas.as_ref().map(Vec::len)),
            ("sweep.alpha1", axes.alpha1.as_ref().map(Vec::len)),
            ("sweep.alpha2", axes.alpha2.as_ref().map(Vec::len)),
            ("sweep.swap", axes.swap.as_ref().map(Vec::len)),
        ];
        for (field, len) in lens {
            if len == Some(0) {
                return Err(Error::config(field, "axis is empty"));
            }
        }
        if axes.betas.is_some() && !matches!(self.trial.env, EnvConfig::Rl { .. }) {
            return Err(Error::config(
                "sweep.betas",
                "only applies to the rl environment",
            ));
        }
        if (axes.alpha1.is_some() || axes.alpha2.is_some())
            && !matches!(self.trial.env, EnvConfig::Content(_))
        {
            return Err(Error::config(
                "sweep.alpha1",
                "only applies to the content environment",
            ));
        }
        if let Some(s) = &self.scenario {
            s.validate(&self.trial)?;
        }
        for p in self.expand() {
            p.validate()?;
        }
        Ok(())
    }

    fn expand(&self) -> Vec<TrialConfig> {
        fn axis<T: Clone>(values: &Option<Vec<T>>, base: T) -> Vec<T> {
            values.clone().unwrap_or_else(|| vec![base])
        }
        let base = &self.trial;
        let (beta, alpha1, alpha2) = match base.env {
            EnvConfig::Rl { beta, .. } => (beta, 0.0, 0.0),
            EnvConfig::Content(c) => (0.0, c.alpha1, c.alpha2),
            EnvConfig::Sl { .. } => (0.0, 0.0, 0.0),
        };
        let a = &self.sweep;
        let mut out = Vec::new();
        for outer in axis(&a.outer, base.outer.kind) {
            for population in axis(&a.populations, base.population) {
                for interval in axis(&a.intervals, base.outer.interval) {
                    for b in axis(&a.betas, beta) {
                        for a1 in axis(&a.alpha1, alpha1) {
                            for a2 in axis(&a.alpha2, alpha2) {
                                for swap in axis(&a.swap, base.swap) {
                                    let mut c = base.clone();
                                    c.outer.kind = outer;
                                    c.outer.interval = interval;
                                    c.population = population;
                                    c.swap = swap;
                                    c.trial = 0;
                                    match &mut c.env {
                                        EnvConfig::Rl { beta, .. } => *beta = b,
                                        EnvConfig::Content(cc) => {
                                            cc.alpha1 = a1;
                                            cc.alpha2 = a2;
                                        }
                                        EnvConfig::Sl { .. } => {}
                                    }
                                    out.push(c);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// The Cartesian product of the sweep axes over the base trial.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        self.expand()
            .into_iter()
            .enumerate()
            .map(|(index, config)| {
                Ok(SweepPoint {
                    index,
                    hash: sha256_hex(to_toml(&config)?.as_bytes()),
                    config,
                })
            })
            .collect()
    }

    /// Hash of every field that affects results. The output directory and the
    /// preset label are excluded.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = ExperimentConfig {
            preset: None,
            out: None,
            ..self.clone()
        };
        Ok(sha256_hex(to_toml(&canonical)?.as_bytes()))
    }

    pub fn trials(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).collect()
    }

    fn tail(&self, steps: usize) -> usize {
        self.tail_steps.unwrap_or((steps / 10).max(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    /// Configuration with `trial = 0`.
    pub config: TrialConfig,
    pub hash: String,
}

impl SweepPoint {
    pub fn dir_name(&self) -> String {
        format!("point-{:03}", self.index)
    }

    pub fn label(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "{} {:?} outer={} N={} T={} swap={}",
            c.env.label(),
            c.learner.kind,
            outer_name(c.outer.kind),
            c.population,
            c.outer.interval,
            c.swap
        );
        match c.env {
            EnvConfig::Rl { beta, .. } => s.push_str(&format!(" beta={beta}")),
            EnvConfig::Content(cc) => {
                s.push_str(&format!(" alpha1={} alpha2={}", cc.alpha1, cc.alpha2))
            }
            EnvConfig::Sl { .. } => {}
        }
        s
    }
}

pub fn outer_name(kind: OuterLoopKind) -> &'static str {
    match kind {
        OuterLoopKind::None => "none",
        OuterLoopKind::Pbt => "pbt",
        OuterLoopKind::PbtExploitOnly => "pbt_exploit_only",
        OuterLoopKind::ReinforceOl => "reinforce_ol",
    }
}

/// Labels a reward-alignment parameter by the sign of the immediate reward
/// for cooperating.
pub fn incentive_label(beta: f64) -> &'static str {
    if beta < 0.0 {
        "incentive-opposed"
    } else if beta > 0.0 {
        "incentive-compatible"
    } else {
        "incentive-orthogonal"
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Error,
}

pub const SUMMARY_HEADER: [&str; 24] = [
    "point",
    "config_hash",
    "env",
    "learner",
    "outer",
    "population",
    "interval",
    "swap",
    "beta",
    "alpha1",
    "alpha2",
    "seed",
    "trial",
    "status",
    "final_behaviour",
    "tail_behaviour",
    "behaviour_auc",
    "param0",
    "param1",
    "mean_lr",
    "final_concept_shift",
    "final_covariate_shift",
    "steps_to_saturation",
    "error",
];

/// End-of-trial metrics for one seed at one sweep point.
///
/// `param0`/`param1` are population means of the first two learner
/// parameters: `(y1_hat, y2_hat)` for scalar predictors, `theta` for
/// REINFORCE, `(Q(C), Q(D))` for Q-learning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub point: usize,
    pub config_hash: String,
    pub env: String,
    pub learner: LearnerKind,
    pub outer: OuterLoopKind,
    pub population: usize,
    pub interval: usize,
    pub swap: bool,
    pub beta: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub seed: u64,
    pub trial: u64,
    pub status: TrialStatus,
    pub final_behaviour: Option<f64>,
    pub tail_behaviour: Option<f64>,
    pub behaviour_auc: Option<f64>,
    pub param0: Option<f64>,
    pub param1: Option<f64>,
    pub mean_lr: Option<f64>,
    pub final_concept_shift: Option<f64>,
    pub final_covariate_shift: Option<f64>,
    /// Steps until the mean largest user probability first exceeds 0.9.
    pub steps_to_saturation: Option<usize>,
    pub error: Option<String>,
}

pub const SATURATION_LEVEL: f64 = 0.9;

fn param_mean(summary: &TrialSummary, k: usize, kind: LearnerKind) -> Option<f64> {
    if kind == LearnerKind::Recommender {
        return None;
    }
    let values: Vec<f64> = summary
        .parameters
        .iter()
        .filter_map(|p| p.get(k).copied())
        .collect();
    (!values.is_empty()).then(|| mean(&values))
}

impl SummaryRow {
    fn new(
        point: &SweepPoint,
        seed: u64,
        trial: u64,
        outcome: &std::result::Result<TrialSummary, String>,
        tail: usize,
    ) -> Self {
        let c = &point.config;
        let (beta, alpha1, alpha2) = match c.env {
            EnvConfig::Rl { beta, .. } => (Some(beta), None, None),
            EnvConfig::Content(cc) => (None, Some(cc.alpha1), Some(cc.alpha2)),
            EnvConfig::Sl { .. } => (None, None, None),
        };
        let mut row = SummaryRow {
            point: point.index,
            config_hash: point.hash.clone(),
            env: c.env.label().to_string(),
            learner: c.learner.kind,
            outer: c.outer.kind,
            population: c.population,
            interval: c.outer.interval,
            swap: c.swap,
            beta,
            alpha1,
            alpha2,
            seed,
            trial,
            status: TrialStatus::Ok,
            final_behaviour: None,
            tail_behaviour: None,
            behaviour_auc: None,
            param0: None,
            param1: None,
            mean_lr: None,
            final_concept_shift: None,
            final_covariate_shift: None,
            steps_to_saturation: None,
            error: None,
        };
        match outcome {
            Ok(s) => {
                let lrs: Vec<f64> = s.hypers.iter().flatten().copied().collect();
                row.final_behaviour = Some(s.final_mean());
                row.tail_behaviour = Some(s.tail_mean(tail));
                row.behaviour_auc = Some(s.behaviour_auc());
                row.param0 = param_mean(s, 0, c.learner.kind);
                row.param1 = param_mean(s, 1, c.learner.kind);
                row.mean_lr = (!lrs.is_empty()).then(|| mean(&lrs));
                row.final_concept_shift = s.final_concept_shift();
                row.final_covariate_shift = s.final_covariate_shift();
                row.steps_to_saturation = s.saturation_step(SATURATION_LEVEL).map(|i| i + 1);
            }
            Err(e) => {
                row.status = TrialStatus::Error;
                row.error = Some(e.clone());
            }
        }
        row
    }
}

/// Result of one (sweep point, seed) job.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub point: usize,
    pub trial: u64,
    pub outcome: std::result::Result<TrialSummary, String>,
    pub chunks: Chunks,
}

fn run_job(config: &ExperimentConfig, point: &SweepPoint, trial: u64) -> TrialResult {
    let tc = TrialConfig {
        trial,
        ..point.config.clone()
    };
    let mut sink = CsvSink::new(trial, config.record_outer);
    let outcome = Trial::new(tc)
        .and_then(|mut t| {
            if let Some(s) = &config.scenario {
                s.apply(&mut t);
            }
            run_to_end(&mut t, &mut sink)
        })
        .map_err(|e| e.to_string());
    let (outcome, chunks) = match (outcome, sink.finish()) {
        (Ok(s), Ok(chunks)) => (Ok(s), chunks),
        (Err(e), _) => (Err(e), Chunks::default()),
        (Ok(_), Err(e)) => (Err(format!("trace: {e}")), Chunks::default()),
    };
    TrialResult {
        point: point.index,
        trial,
        outcome,
        chunks,
    }
}

/// Runs every (point, seed) job on a pool of `workers` threads (0 picks the
/// number of CPUs). Results come back in (point, trial) order.
pub fn execute(config: &ExperimentConfig, workers: usize) -> Result<Vec<TrialResult>> {
    config.validate()?;
    let points = config.points()?;
    let jobs: Vec<(&SweepPoint, u64)> = points
        .iter()
        .flat_map(|p| config.trials().into_iter().map(move |t| (p, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::State(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|(p, t)| run_job(config, p, *t))
            .collect()
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEntry {
    pub index: usize,
    pub dir: String,
    pub config_hash: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub point: usize,
    pub trial: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    pub trials: Vec<u64>,
    pub files: Vec<String>,
    pub points: Vec<PointEntry>,
    pub failures: Vec<TrialFailure>,
    pub config: ExperimentConfig,
}

type ChunkBody = fn(&Chunks) -> &[u8];

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURE_FILE: &str = "failure_rates.csv";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::ConfigParse(format!("{}: {}", path.display(), e.message())))
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub summary: Vec<SummaryRow>,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        !self.manifest.failures.is_empty()
    }
}

/// Executes the experiment and writes the run directory `out`.
pub fn run_experiment(config: &ExperimentConfig, workers: usize, out: &Path) -> Result<RunOutcome> {
    write_run(config, workers, out, false)
}

/// Like [`run_experiment`], and additionally writes the failure-rate table.
/// Requires at least one sweep axis.
pub fn run_sweep(config: &ExperimentConfig, workers: usize, out: &Path) -> Result<RunOutcome> {
    if config.sweep.is_empty() {
        return Err(Error::config("sweep", "no sweep axes declared"));
    }
    write_run(config, workers, out, true)
}

fn write_run(
    config: &ExperimentConfig,
    workers: usize,
    out: &Path,
    failure_table: bool,
) -> Result<RunOutcome> {
    let points = config.points()?;
    let results = execute(config, workers)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut files = vec![SUMMARY_FILE.to_string()];
    for p in &points {
        let dir = out.join(p.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mine: Vec<&TrialResult> = results.iter().filter(|r| r.point == p.index).collect();
        let mut outputs: Vec<(&str, &[&str], ChunkBody)> = vec![
            ("steps.csv", &STEPS_HEADER, |c| c.steps.as_slice()),
            ("drift.csv", &DRIFT_HEADER, |c| c.drift.as_slice()),
        ];
        if config.record_outer {
            outputs.push(("outer.csv", &OUTER_HEADER, |c| c.outer.as_slice()));
        }
        for (name, header, body) in outputs {
            write_chunks(
                &dir.join(name),
                header,
                mine.iter().map(|r| body(&r.chunks)),
            )?;
            files.push(format!("{}/{name}", p.dir_name()));
        }
    }

    let summary: Vec<SummaryRow> = results
        .iter()
        .map(|r| {
            let p = &points[r.point];
            SummaryRow::new(
                p,
                config.trial.seed,
                r.trial,
                &r.outcome,
                config.tail(p.config.steps),
            )
        })
        .collect();
    write_rows(&out.join(SUMMARY_FILE), &summary, &SUMMARY_HEADER)?;
    if failure_table {
        write_rows(
            &out.join(FAILURE_FILE),
            &failure_rates(&summary),
            &FAILURE_HEADER,
        )?;
        files.push(FAILURE_FILE.to_string());
    }

    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.config_hash()?,
        preset: config.preset.clone(),
        seed: config.trial.seed,
        trials: config.trials(),
        files,
        points: points
            .iter()
            .map(|p| PointEntry {
                index: p.index,
                dir: p.dir_name(),
                config_hash: p.hash.clone(),
                label: p.label(),
            })
            .collect(),
        failures: results
            .iter()
            .filter_map(|r| {
                r.outcome.as_ref().err().map(|e| TrialFailure {
                    point: r.point,
                    trial: r.trial,
                    error: e.clone(),
                })
            })
            .collect(),
        config: config.clone(),
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, to_toml(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(RunOutcome { manifest, summary })
}

/// Final-behaviour level above which a seed counts as a failure of the unit
/// test.
pub const FAILURE_THRESHOLD: f64 = 0.5;

pub const FAILURE_HEADER: [&str; 17] = [
    "point",
    "env",
    "learner",
    "outer",
    "population",
    "interval",
    "swap",
    "beta",
    "incentive",
    "alpha1",
    "alpha2",
    "seeds",
    "errors",
    "failures",
    "failure_rate",
    "mean_behaviour",
    "stderr_behaviour",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub point: usize,
    pub env: String,
    pub learner: LearnerKind,
    pub outer: OuterLoopKind,
    pub population: usize,
    pub interval: usize,
    pub swap: bool,
    pub beta: Option<f64>,
    pub incentive: Option<String>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub seeds: usize,
    pub errors: usize,
    pub failures: usize,
    pub failure_rate: Option<f64>,
    pub mean_behaviour: Option<f64>,
    pub stderr_behaviour: Option<f64>,
}

/// Per sweep point: the fraction of seeds whose final behaviour exceeds
/// [`FAILURE_THRESHOLD`], and the mean final behaviour.
pub fn failure_rates(summary: &[SummaryRow]) -> Vec<FailureRow> {
    let mut points: Vec<usize> = summary.iter().map(|r| r.point).collect();
    points.sort_unstable();
    points.dedup();
    points
        .into_iter()
        .map(|point| {
            let rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.point == point).collect();
            let first = rows[0];
            let finals: Vec<f64> = rows.iter().filter_map(|r| r.final_behaviour).collect();
            let failures = finals.iter().filter(|b| **b > FAILURE_THRESHOLD).count();
            FailureRow {
                point,
                env: first.env.clone(),
                learner: first.learner,
                outer: first.outer,
                population: first.population,
                interval: first.interval,
                swap: first.swap,
                beta: first.beta,
                incentive: first.beta.map(|b| incentive_label(b).to_string()),
                alpha1: first.alpha1,
                alpha2: first.alpha2,
                seeds: rows.len(),
                errors: rows.len() - finals.len(),
                failures,
                failure_rate: (!finals.is_empty()).then(|| failures as f64 / finals.len() as f64),
                mean_behaviour: (!finals.is_empty()).then(|| mean(&finals)),
                stderr_behaviour: (finals.len() > 1).then(|| std_error(&finals)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c.preset.as_deref(), Some(*name));
            assert!(!c.points().unwrap().is_empty());
        }
        assert!(preset("nope").unwrap_err().is_config());
    }

    #[test]
    fn unknown_field_is_named() {
        let text = "n_seeds = 1\nbogus_field = 3\n[trial]\npopulation = 1\nsteps = 10\n[trial.env]\nkind = \"rl\"\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("bogus_field"), "{err}");

        let nested = "[trial]\npopulation = 1\nsteps = 10\nstepz = 3\n[trial.env]\nkind = \"rl\"\n";
        let err = ExperimentConfig::from_toml(nested).unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
    }

    #[test]
    fn kl_direction_changes_covariate_shift() {
        let mut c = preset("contentrec-pair").unwrap();
        c.n_seeds = 1;
        c.trial.population = 2;
        c.trial.steps = 100;
        c.sweep = SweepAxes::default();
        let fwd = execute(&c, 1).unwrap();
        c.trial.kl_direction = crate::metrics::KlDirection::InitialToCurrent;
        let rev = execute(&c, 1).unwrap();
        let shift = |r: &[TrialResult]| r[0].outcome.as_ref().unwrap().final_covariate_shift().unwrap();
        assert!(shift(&fwd) > 0.0 && shift(&rev) > 0.0);
        assert_ne!(shift(&fwd), shift(&rev));

        let text = "[trial]\npopulation = 1\nsteps = 10\nkl_direction = \"initial_to_current\"\n[trial.env]\nkind = \"content\"\n[trial.learner]\nkind = \"recommender\"\n";
        let parsed = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(parsed.trial.kl_direction, crate::metrics::KlDirection::InitialToCurrent);
    }

    #[test]
    fn sweep_product_size() {
        let mut c = preset("rl-pbt").unwrap();
        c.sweep = SweepAxes {
            populations: Some(vec![10, 100]),
            intervals: Some(vec![1, 10]),
            swap: Some(vec![false, true]),
            ..Default::default()
        };
        let points = c.points().unwrap();
        assert_eq!(points.len(), 8);
        let mut hashes: Vec<&str> = points.iter().map(|p| p.hash.as_str()).collect();
        hashes.sort_unstable();
        hashes.dedup();
        assert_eq!(hashes.len(), 8);
        assert_eq!(points[7].config.population, 100);
        assert_eq!(points[7].config.outer.interval, 10);
        assert!(points[7].config.swap);
    }

    #[test]
    fn empty_axis_rejected() {
        let mut c = preset("rl-pbt").unwrap();
        c.sweep.intervals = Some(vec![]);
        assert!(c.validate().unwrap_err().is_config());
        let mut c = preset("rl-baseline").unwrap();
        c.sweep.alpha1 = Some(vec![0.1]);
        assert!(c.validate().is_err());
        let mut c = preset("rl-baseline").unwrap();
        c.n_seeds = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_meaningful_fields() {
        let base = preset("rl-baseline").unwrap();
        let h = base.config_hash().unwrap();

        let mut relabelled = base.clone();
        relabelled.out = Some("elsewhere".into());
        relabelled.preset = Some("renamed".into());
        assert_eq!(relabelled.config_hash().unwrap(), h);

        let mut c = base.clone();
        c.trial.steps = 9990;
        assert_ne!(c.config_hash().unwrap(), h);
        let mut c = base.clone();
        c.trial.seed = 1;
        assert_ne!(c.config_hash().unwrap(), h);
        let mut c = base.clone();
        c.n_seeds = 49;
        assert_ne!(c.config_hash().unwrap(), h);
        let mut c = base.clone();
        c.trial.learner.epsilon = 0.2;
        assert_ne!(c.config_hash().unwrap(), h);

        // Spelling out a default does not change the hash.
        let explicit = preset("rl-baseline").unwrap();
        let text = to_toml(&explicit).unwrap();
        assert_eq!(
            ExperimentConfig::from_toml(&text)
                .unwrap()
                .config_hash()
                .unwrap(),
            h
        );
    }

    #[test]
    fn incentive_labels() {
        assert_eq!(incentive_label(-0.5), "incentive-opposed");
        assert_eq!(incentive_label(0.0), "incentive-orthogonal");
        assert_eq!(incentive_label(0.5), "incentive-compatible");
    }

    #[test]
    fn summary_header_matches_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = preset("rl-baseline").unwrap();
        c.n_seeds = 2;
        c.trial.steps = 20;
        let out = run_experiment(&c, 1, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(text.lines().next().unwrap(), SUMMARY_HEADER.join(","));
        assert_eq!(out.summary.len(), 2);
        let back: Vec<SummaryRow> =
            crate::recorder::read_rows(&dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(back, out.summary);

        let rates = failure_rates(&out.summary);
        let p = dir.path().join(FAILURE_FILE);
        write_rows(&p, &rates, &FAILURE_HEADER).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap().lines().next().unwrap(),
            FAILURE_HEADER.join(",")
        );
    }

    #[test]
    fn failure_rate_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = preset("rl-baseline").unwrap();
        c.n_seeds = 4;
        c.trial.steps = 10;
        let mut rows = run_experiment(&c, 1, dir.path()).unwrap().summary;
        for (r, b) in rows.iter_mut().zip([0.9, 0.2, 0.6, 0.5]) {
            r.final_behaviour = Some(b);
        }
        let table = failure_rates(&rows);
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].failures, 2);
        assert_eq!(table[0].failure_rate, Some(0.5));
        assert!((table[0].mean_behaviour.unwrap() - 0.55).abs() < 1e-12);
        assert_eq!(table[0].incentive.as_deref(), Some("incentive-opposed"));
    }

    #[test]
    fn sweep_requires_axes() {
        let dir = tempfile::tempdir().unwrap();
        let c = preset("rl-baseline").unwrap();
        assert!(run_sweep(&c, 1, dir.path()).unwrap_err().is_config());
    }
}
