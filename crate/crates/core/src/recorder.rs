//! CSV output for step and drift traces.
//!
//! Floats are written with Rust's `Display`, which prints the shortest
//! decimal that parses back to the same `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scheduler::{DriftRecord, OuterEvent, RecordSink, StepAction, StepRecord};

pub const STEPS_HEADER: [&str; 7] = ["trial", "t", "learner", "env", "action", "reward", "extra"];
pub const DRIFT_HEADER: [&str; 6] = [
    "trial",
    "t",
    "learner",
    "accuracy",
    "concept_shift",
    "covariate_shift",
];

fn action_field(action: &StepAction) -> String {
    match action {
        StepAction::Rl(a) => a.symbol().to_string(),
        StepAction::Sl(y1, _) => y1.to_string(),
        StepAction::Article { recommended, .. } => recommended.to_string(),
    }
}

pub fn step_fields(r: &StepRecord) -> [String; 7] {
    [
        r.trial.to_string(),
        r.t.to_string(),
        r.learner.to_string(),
        r.env.to_string(),
        action_field(&r.action),
        r.reward.to_string(),
        r.extra().to_string(),
    ]
}

pub fn drift_fields(r: &DriftRecord) -> [String; 6] {
    [
        r.trial.to_string(),
        r.t.to_string(),
        r.learner.to_string(),
        r.accuracy.to_string(),
        r.concept_shift.to_string(),
        r.covariate_shift.to_string(),
    ]
}

fn headerless() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new())
}

pub const OUTER_HEADER: [&str; 4] = ["trial", "t", "learner", "donor"];

/// Headerless CSV bodies of one trial.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Chunks {
    pub steps: Vec<u8>,
    pub drift: Vec<u8>,
    pub outer: Vec<u8>,
}

/// Serializes records of one trial into headerless CSV chunks, as they are
/// produced. Chunks from several trials are joined by [`write_chunks`].
pub struct CsvSink {
    trial: u64,
    steps: csv::Writer<Vec<u8>>,
    drift: csv::Writer<Vec<u8>>,
    outer: Option<csv::Writer<Vec<u8>>>,
    error: Option<csv::Error>,
}

impl Default for CsvSink {
    fn default() -> Self {
        Self::new(0, false)
    }
}

impl CsvSink {
    /// `outer` enables one row per EXPLOIT copy (`learner` overwritten by
    /// `donor`).
    pub fn new(trial: u64, outer: bool) -> Self {
        Self {
            trial,
            steps: headerless(),
            drift: headerless(),
            outer: outer.then(headerless),
            error: None,
        }
    }

    fn keep(&mut self, r: csv::Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }

    pub fn finish(self) -> std::result::Result<Chunks, csv::Error> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let body = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| e.into_error());
        Ok(Chunks {
            steps: body(self.steps)?,
            drift: body(self.drift)?,
            outer: match self.outer {
                Some(w) => body(w)?,
                None => Vec::new(),
            },
        })
    }
}

impl RecordSink for CsvSink {
    fn step(&mut self, record: &StepRecord) {
        let r = self.steps.write_record(step_fields(record));
        self.keep(r);
    }

    fn drift(&mut self, record: &DriftRecord) {
        let r = self.drift.write_record(drift_fields(record));
        self.keep(r);
    }

    fn outer(&mut self, event: &OuterEvent) {
        let trial = self.trial;
        let Some(w) = self.outer.as_mut() else { return };
        let mut result = Ok(());
        for &(dst, donor) in &event.copies {
            result = w.write_record([
                trial.to_string(),
                event.t.to_string(),
                dst.to_string(),
                donor.to_string(),
            ]);
            if result.is_err() {
                break;
            }
        }
        self.keep(result);
    }
}

fn header_line(header: &[&str]) -> Vec<u8> {
    let mut line = header.join(",").into_bytes();
    line.push(b'\n');
    line
}

/// Writes `header` followed by the chunks in the given order.
pub fn write_chunks<'a>(
    path: &Path,
    header: &[&str],
    chunks: impl IntoIterator<Item = &'a [u8]>,
) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    file.write_all(&header_line(header))
        .map_err(|e| Error::io(path, e))?;
    for chunk in chunks {
        file.write_all(chunk).map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}

fn sorted_by_key<T: Copy, K: Ord>(records: &[T], key: impl Fn(&T) -> K) -> Vec<T> {
    let mut v = records.to_vec();
    v.sort_by_key(key);
    v
}

/// Writes step records in `(trial, t, learner)` order.
pub fn write_steps(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut sink = CsvSink::default();
    for r in sorted_by_key(records, |r| (r.trial, r.t, r.learner)) {
        sink.step(&r);
    }
    let chunks = sink.finish().map_err(|source| Error::Csv {
        path: path.into(),
        source,
    })?;
    write_chunks(path, &STEPS_HEADER, [chunks.steps.as_slice()])
}

/// Writes drift records in `(trial, t, learner)` order.
pub fn write_drift(path: &Path, records: &[DriftRecord]) -> Result<()> {
    let mut sink = CsvSink::default();
    for r in sorted_by_key(records, |r| (r.trial, r.t, r.learner)) {
        sink.drift(&r);
    }
    let chunks = sink.finish().map_err(|source| Error::Csv {
        path: path.into(),
        source,
    })?;
    write_chunks(path, &DRIFT_HEADER, [chunks.drift.as_slice()])
}

/// A parsed row of `steps.csv`. The action column is kept as text since its
/// meaning depends on the environment.
#[derive(Clone, Debug, PartialEq, serde::Deserialize)]
pub struct StepRow {
    pub trial: u64,
    pub t: u64,
    pub learner: usize,
    pub env: usize,
    pub action: String,
    pub reward: f64,
    pub extra: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Deserialize)]
pub struct DriftRow {
    pub trial: u64,
    pub t: u64,
    pub learner: usize,
    pub accuracy: f64,
    pub concept_shift: f64,
    pub covariate_shift: f64,
}

/// Reads every row of a headed CSV file.
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

/// Writes serializable rows with a header derived from the field names. An
/// empty slice produces a file holding only `empty_header`.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T], empty_header: &[&str]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    if rows.is_empty() {
        return fs::write(path, header_line(empty_header)).map_err(|e| Error::io(path, e));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;

    fn step(trial: u64, t: u64, learner: usize, reward: f64) -> StepRecord {
        StepRecord {
            trial,
            t,
            learner,
            env: learner,
            action: StepAction::Rl(if learner.is_multiple_of(2) {
                Action::Cooperate
            } else {
                Action::Defect
            }),
            reward,
            correct: false,
        }
    }

    #[test]
    fn empty_input_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("steps.csv");
        write_steps(&p, &[]).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "trial,t,learner,env,action,reward,extra\n"
        );
        let d = dir.path().join("drift.csv");
        write_drift(&d, &[]).unwrap();
        assert_eq!(
            fs::read_to_string(&d).unwrap(),
            "trial,t,learner,accuracy,concept_shift,covariate_shift\n"
        );
    }

    #[test]
    fn rows_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("steps.csv");
        let records = [
            step(1, 0, 0, 0.0),
            step(0, 1, 1, 0.5),
            step(0, 1, 0, -1.0),
            step(0, 0, 1, 0.5),
        ];
        write_steps(&p, &records).unwrap();
        let rows: Vec<StepRow> = read_rows(&p).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.trial, r.t, r.learner)).collect();
        assert_eq!(keys, vec![(0, 0, 1), (0, 1, 0), (0, 1, 1), (1, 0, 0)]);
        assert_eq!(rows[1].action, "C");
        assert_eq!(rows[2].action, "D");
    }

    #[test]
    fn identical_inputs_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<_> = (0..50).map(|t| step(0, t, 0, 0.1 * t as f64)).collect();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_steps(&a, &records).unwrap();
        write_steps(&b, &records).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let err = write_steps(Path::new("/nonexistent-dir/x/steps.csv"), &[]).unwrap_err();
        assert!(
            err.to_string().contains("/nonexistent-dir/x/steps.csv"),
            "{err}"
        );
    }

    mod parse_back {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn values_survive_exactly(
                rewards in proptest::collection::vec(-1e6f64..1e6, 1..40),
                shifts in proptest::collection::vec((0.0f64..1.0, 0.0f64..2.0, 0.0f64..5.0), 1..40),
                tiny in 1e-300f64..1e-200,
            ) {
                let dir = tempfile::tempdir().unwrap();
                let mut records: Vec<StepRecord> = rewards
                    .iter()
                    .enumerate()
                    .map(|(t, r)| StepRecord {
                        action: StepAction::Sl(r / 3.0, tiny * r),
                        ..step(0, t as u64, 0, *r)
                    })
                    .collect();
                records.push(step(0, rewards.len() as u64, 1, tiny));
                let p = dir.path().join("steps.csv");
                write_steps(&p, &records).unwrap();
                let rows: Vec<StepRow> = read_rows(&p).unwrap();
                prop_assert_eq!(rows.len(), records.len());
                for (row, rec) in rows.iter().zip(&records) {
                    prop_assert_eq!(row.reward.to_bits(), rec.reward.to_bits());
                    prop_assert_eq!(row.extra.to_bits(), rec.extra().to_bits());
                    if let StepAction::Sl(y1, _) = rec.action {
                        prop_assert_eq!(row.action.parse::<f64>().unwrap().to_bits(), y1.to_bits());
                    }
                }

                let drift: Vec<DriftRecord> = shifts
                    .iter()
                    .enumerate()
                    .map(|(t, &(accuracy, c, v))| DriftRecord {
                        trial: 2,
                        t: t as u64,
                        learner: 3,
                        env: 1,
                        accuracy,
                        concept_shift: c,
                        covariate_shift: v,
                    })
                    .collect();
                let d = dir.path().join("drift.csv");
                write_drift(&d, &drift).unwrap();
                let back: Vec<DriftRow> = read_rows(&d).unwrap();
                for (row, rec) in back.iter().zip(&drift) {
                    prop_assert_eq!(row.accuracy.to_bits(), rec.accuracy.to_bits());
                    prop_assert_eq!(row.concept_shift.to_bits(), rec.concept_shift.to_bits());
                    prop_assert_eq!(row.covariate_shift.to_bits(), rec.covariate_shift.to_bits());
                }
            }
        }
    }
}
