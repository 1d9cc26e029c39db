//! Aggregate tables computed from a finished run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{
    failure_rates, FailureRow, Manifest, SummaryRow, FAILURE_HEADER, MANIFEST_FILE, SUMMARY_FILE,
};
use crate::learners::LearnerKind;
use crate::meta::OuterLoopKind;
use crate::metrics::shift_vs_accuracy_curve;
use crate::numerics::{mean, std_error};
use crate::recorder::{read_rows, write_rows, DriftRow};
use crate::scheduler::DriftRecord;

pub const REPORT_DIR: &str = "report";

/// Cooperation rate above which a Q-learning seed counts as persistently
/// cooperating.
pub const PERSISTENT_THRESHOLD: f64 = 0.6;

pub const QLEARNING_HEADER: [&str; 10] = [
    "point",
    "swap",
    "population",
    "seed",
    "trial",
    "tail_behaviour",
    "final_behaviour",
    "q_cooperate",
    "q_defect",
    "persistent",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPanelRow {
    pub point: usize,
    pub swap: bool,
    pub population: usize,
    pub seed: u64,
    pub trial: u64,
    pub tail_behaviour: f64,
    pub final_behaviour: f64,
    pub q_cooperate: f64,
    pub q_defect: f64,
    pub persistent: bool,
}

pub const DRIFT_SERIES_HEADER: [&str; 13] = [
    "point",
    "outer",
    "swap",
    "alpha1",
    "alpha2",
    "t",
    "trials",
    "accuracy_mean",
    "accuracy_stderr",
    "concept_mean",
    "concept_stderr",
    "covariate_mean",
    "covariate_stderr",
];

/// Per recorded step: mean and standard error over trials of the
/// per-trial population means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSeriesRow {
    pub point: usize,
    pub outer: OuterLoopKind,
    pub swap: bool,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub t: u64,
    pub trials: usize,
    pub accuracy_mean: f64,
    pub accuracy_stderr: Option<f64>,
    pub concept_mean: f64,
    pub concept_stderr: Option<f64>,
    pub covariate_mean: f64,
    pub covariate_stderr: Option<f64>,
}

pub const SHIFT_HEADER: [&str; 9] = [
    "point",
    "outer",
    "swap",
    "alpha1",
    "alpha2",
    "accuracy_lo",
    "count",
    "concept_shift",
    "covariate_shift",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub point: usize,
    pub outer: OuterLoopKind,
    pub swap: bool,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub accuracy_lo: f64,
    pub count: usize,
    pub concept_shift: f64,
    pub covariate_shift: f64,
}

pub const FAILURE_GRID_FILE: &str = "failure_grid.csv";
pub const QLEARNING_FILE: &str = "qlearning_panel.csv";
pub const DRIFT_SERIES_FILE: &str = "drift_series.csv";
pub const SHIFT_FILE: &str = "shift_vs_accuracy.csv";

#[derive(Clone, Debug)]
pub struct Report {
    pub dir: PathBuf,
    pub failure_grid: Vec<FailureRow>,
    pub qlearning: Vec<QPanelRow>,
    pub drift: Vec<DriftSeriesRow>,
    pub shift: Vec<ShiftRow>,
}

fn check_files(dir: &Path) -> Result<Manifest> {
    let required = [dir.join(MANIFEST_FILE), dir.join(SUMMARY_FILE)];
    let missing: Vec<PathBuf> = required.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    let manifest = Manifest::load(dir)?;
    let missing: Vec<PathBuf> = manifest
        .files
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    Ok(manifest)
}

pub fn qlearning_panel(summary: &[SummaryRow]) -> Vec<QPanelRow> {
    summary
        .iter()
        .filter(|r| r.learner == LearnerKind::QLearning)
        .filter_map(|r| {
            Some(QPanelRow {
                point: r.point,
                swap: r.swap,
                population: r.population,
                seed: r.seed,
                trial: r.trial,
                tail_behaviour: r.tail_behaviour?,
                final_behaviour: r.final_behaviour?,
                q_cooperate: r.param0?,
                q_defect: r.param1?,
                persistent: r.tail_behaviour? > PERSISTENT_THRESHOLD,
            })
        })
        .collect()
}

fn stderr(values: &[f64]) -> Option<f64> {
    (values.len() > 1).then(|| std_error(values))
}

/// Averages drift rows over learners within each trial, then reports mean
/// and standard error across trials per step.
pub fn drift_series(point: &SummaryRow, rows: &[DriftRow]) -> Vec<DriftSeriesRow> {
    let mut per_trial: BTreeMap<(u64, u64), [f64; 4]> = BTreeMap::new();
    for r in rows {
        let e = per_trial.entry((r.t, r.trial)).or_default();
        e[0] += r.accuracy;
        e[1] += r.concept_shift;
        e[2] += r.covariate_shift;
        e[3] += 1.0;
    }
    let mut by_t: BTreeMap<u64, Vec<[f64; 3]>> = BTreeMap::new();
    for ((t, _), [a, c, v, n]) in per_trial {
        by_t.entry(t).or_default().push([a / n, c / n, v / n]);
    }
    by_t.into_iter()
        .map(|(t, values)| {
            let col = |k: usize| values.iter().map(|v| v[k]).collect::<Vec<f64>>();
            let (a, c, v) = (col(0), col(1), col(2));
            DriftSeriesRow {
                point: point.point,
                outer: point.outer,
                swap: point.swap,
                alpha1: point.alpha1,
                alpha2: point.alpha2,
                t,
                trials: values.len(),
                accuracy_mean: mean(&a),
                accuracy_stderr: stderr(&a),
                concept_mean: mean(&c),
                concept_stderr: stderr(&c),
                covariate_mean: mean(&v),
                covariate_stderr: stderr(&v),
            }
        })
        .collect()
}

/// Shift-vs-accuracy buckets for one sweep point. Rows recorded before the
/// accuracy window of `window` steps has filled are skipped.
pub fn shift_table(point: &SummaryRow, rows: &[DriftRow], window: usize) -> Result<Vec<ShiftRow>> {
    let records: Vec<DriftRecord> = rows
        .iter()
        .filter(|r| r.t + 1 >= window as u64)
        .map(|r| DriftRecord {
            trial: r.trial,
            t: r.t,
            learner: r.learner,
            env: 0,
            accuracy: r.accuracy,
            concept_shift: r.concept_shift,
            covariate_shift: r.covariate_shift,
        })
        .collect();
    if records.is_empty() {
        return Ok(Vec::new());
    }
    Ok(shift_vs_accuracy_curve(records.iter().map(|r| ("", r)))?
        .into_iter()
        .map(|b| ShiftRow {
            point: point.point,
            outer: point.outer,
            swap: point.swap,
            alpha1: point.alpha1,
            alpha2: point.alpha2,
            accuracy_lo: b.accuracy_lo,
            count: b.count,
            concept_shift: b.concept_shift,
            covariate_shift: b.covariate_shift,
        })
        .collect())
}

/// Reads a run directory and writes the aggregate tables into its `report/`
/// subdirectory.
pub fn report(dir: &Path) -> Result<Report> {
    let manifest = check_files(dir)?;
    let summary: Vec<SummaryRow> = read_rows(&dir.join(SUMMARY_FILE))?;
    let failure_grid = failure_rates(&summary);
    let qlearning = qlearning_panel(&summary);

    let window = manifest.config.trial.accuracy_window;
    let mut drift = Vec::new();
    let mut shift = Vec::new();
    for p in &manifest.points {
        let Some(first) = summary.iter().find(|r| r.point == p.index) else {
            continue;
        };
        if first.env != "content" {
            continue;
        }
        let rows: Vec<DriftRow> = read_rows(&dir.join(&p.dir).join("drift.csv"))?;
        drift.extend(drift_series(first, &rows));
        shift.extend(shift_table(first, &rows, window)?);
    }

    let out = dir.join(REPORT_DIR);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_rows(&out.join(FAILURE_GRID_FILE), &failure_grid, &FAILURE_HEADER)?;
    write_rows(&out.join(QLEARNING_FILE), &qlearning, &QLEARNING_HEADER)?;
    write_rows(&out.join(DRIFT_SERIES_FILE), &drift, &DRIFT_SERIES_HEADER)?;
    write_rows(&out.join(SHIFT_FILE), &shift, &SHIFT_HEADER)?;
    Ok(Report {
        dir: out,
        failure_grid,
        qlearning,
        drift,
        shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{preset, run_experiment};

    #[test]
    fn empty_directory_lists_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        match report(dir.path()) {
            Err(Error::MissingFiles(files)) => {
                let names: Vec<String> = files
                    .iter()
                    .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                    .collect();
                assert_eq!(names, vec![MANIFEST_FILE, SUMMARY_FILE]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_trace_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = preset("rl-baseline").unwrap();
        c.n_seeds = 1;
        c.trial.steps = 10;
        run_experiment(&c, 1, dir.path()).unwrap();
        fs::remove_file(dir.path().join("point-000/steps.csv")).unwrap();
        let err = report(dir.path()).unwrap_err();
        assert!(
            matches!(&err, Error::MissingFiles(f) if f.len() == 1),
            "{err}"
        );
        assert!(err.to_string().contains("steps.csv"));
    }

    fn drift_row(trial: u64, t: u64, learner: usize, accuracy: f64, shift: f64) -> DriftRow {
        DriftRow {
            trial,
            t,
            learner,
            accuracy,
            concept_shift: shift,
            covariate_shift: 2.0 * shift,
        }
    }

    #[test]
    fn drift_stderr_over_trials() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = preset("contentrec-pair").unwrap();
        c.n_seeds = 1;
        c.trial.steps = 10;
        let point = run_experiment(&c, 1, dir.path()).unwrap().summary.remove(0);
        // Two learners per trial; trial means are 0.1, 0.2, 0.6.
        let rows = vec![
            drift_row(0, 0, 0, 0.0, 0.05),
            drift_row(0, 0, 1, 0.2, 0.15),
            drift_row(1, 0, 0, 0.2, 0.2),
            drift_row(1, 0, 1, 0.2, 0.2),
            drift_row(2, 0, 0, 0.6, 0.6),
            drift_row(2, 0, 1, 0.6, 0.6),
        ];
        let series = drift_series(&point, &rows);
        assert_eq!(series.len(), 1);
        let s = &series[0];
        assert_eq!(s.trials, 3);
        assert!((s.concept_mean - 0.3).abs() < 1e-12);
        // Sample sd of (0.1, 0.2, 0.6) is sqrt(0.07); stderr = sqrt(0.07 / 3).
        assert!((s.concept_stderr.unwrap() - (0.07f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.covariate_stderr.unwrap() - 2.0 * (0.07f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.accuracy_mean - 0.3).abs() < 1e-12);

        let table = shift_table(&point, &rows, 1).unwrap();
        assert_eq!(table.iter().map(|r| r.count).sum::<usize>(), 6);
        assert!(shift_table(&point, &rows, 2).unwrap().is_empty());
    }

    #[test]
    fn qlearning_panel_flags_persistent_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = preset("rl-qlearning").unwrap();
        c.n_seeds = 2;
        c.trial.steps = 600;
        let mut summary = run_experiment(&c, 1, dir.path()).unwrap().summary;
        summary[0].tail_behaviour = Some(0.61);
        summary[1].tail_behaviour = Some(0.6);
        let panel = qlearning_panel(&summary);
        assert_eq!(panel.len(), 2);
        assert!(panel[0].persistent);
        assert!(!panel[1].persistent);
        assert_eq!(panel[0].q_cooperate, summary[0].param0.unwrap());
    }
}
