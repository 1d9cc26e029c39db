//! Observables computed from environment state and traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_distance, kl_divergence, softmax};
use crate::scheduler::{DriftRecord, StepRecord};

/// Mean over user types of the cosine distance between initial and current
/// interest rows.
pub fn concept_shift(w_init: &[f64], w_now: &[f64], n_articles: usize) -> Result<f64> {
    if w_init.len() != w_now.len() {
        return Err(Error::Shape {
            expected: w_init.len(),
            got: w_now.len(),
        });
    }
    if n_articles == 0 || !w_init.len().is_multiple_of(n_articles) || w_init.is_empty() {
        return Err(Error::Shape {
            expected: n_articles,
            got: w_init.len(),
        });
    }
    let rows = w_init.len() / n_articles;
    let mut total = 0.0;
    for (a, b) in w_init.chunks(n_articles).zip(w_now.chunks(n_articles)) {
        total += cosine_distance(a, b)?;
    }
    Ok(total / rows as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(softmax(g_now) || softmax(g_init))`.
    #[default]
    CurrentToInitial,
    /// `KL(softmax(g_init) || softmax(g_now))`.
    InitialToCurrent,
}

/// KL divergence between the current and initial user distributions.
pub fn covariate_shift(g_init: &[f64], g_now: &[f64]) -> Result<f64> {
    covariate_shift_with(g_init, g_now, KlDirection::CurrentToInitial)
}

pub fn covariate_shift_with(g_init: &[f64], g_now: &[f64], direction: KlDirection) -> Result<f64> {
    if g_init.len() != g_now.len() {
        return Err(Error::Shape {
            expected: g_init.len(),
            got: g_now.len(),
        });
    }
    let p_init = softmax(g_init)?;
    let p_now = softmax(g_now)?;
    match direction {
        KlDirection::CurrentToInitial => kl_divergence(&p_now, &p_init),
        KlDirection::InitialToCurrent => kl_divergence(&p_init, &p_now),
    }
}

/// Width of an accuracy bucket in the shift-vs-accuracy table.
pub const ACCURACY_BUCKET: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftBucket {
    pub variant: String,
    /// Lower edge of the bucket.
    pub accuracy_lo: f64,
    pub count: usize,
    pub concept_shift: f64,
    pub covariate_shift: f64,
}

/// Averages both shifts per accuracy bucket and variant. Empty buckets are
/// omitted; rows are ordered by variant, then bucket.
pub fn shift_vs_accuracy_curve<'a, I>(records: I) -> Result<Vec<ShiftBucket>>
where
    I: IntoIterator<Item = (&'a str, &'a DriftRecord)>,
{
    let mut acc: BTreeMap<(String, usize), (usize, f64, f64)> = BTreeMap::new();
    let buckets = (1.0 / ACCURACY_BUCKET).round() as usize;
    for (variant, r) in records {
        let b = ((r.accuracy / ACCURACY_BUCKET).floor().max(0.0) as usize).min(buckets - 1);
        let e = acc.entry((variant.to_string(), b)).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += r.concept_shift;
        e.2 += r.covariate_shift;
    }
    if acc.is_empty() {
        return Err(Error::InvalidArgument("no drift records".into()));
    }
    Ok(acc
        .into_iter()
        .map(|((variant, b), (n, c, v))| ShiftBucket {
            variant,
            accuracy_lo: b as f64 / buckets as f64,
            count: n,
            concept_shift: c / n as f64,
            covariate_shift: v / n as f64,
        })
        .collect())
}

/// Cooperation rates from RL step records.
#[derive(Clone, Debug, PartialEq)]
pub struct CooperationSummary {
    /// Population mean cooperation at each recorded step.
    pub series: Vec<(u64, f64)>,
    /// Per-learner mean cooperation over the final 10% of recorded steps.
    pub per_learner: Vec<f64>,
    pub population_mean: f64,
}

impl CooperationSummary {
    pub fn from_records(records: &[StepRecord], population: usize) -> Result<Self> {
        let mut by_t: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
        for r in records {
            let e = by_t.entry(r.t).or_default();
            e.0 += r.extra() as usize;
            e.1 += 1;
        }
        if by_t.is_empty() {
            return Err(Error::InvalidArgument("no step records".into()));
        }
        let times: Vec<u64> = by_t.keys().copied().collect();
        let tail_from = times[times.len() - (times.len() / 10).max(1)];
        let mut coop = vec![0usize; population];
        let mut seen = vec![0usize; population];
        for r in records.iter().filter(|r| r.t >= tail_from) {
            if r.learner >= population {
                return Err(Error::Index {
                    index: r.learner,
                    len: population,
                });
            }
            coop[r.learner] += r.extra() as usize;
            seen[r.learner] += 1;
        }
        let per_learner: Vec<f64> = coop
            .iter()
            .zip(&seen)
            .map(|(c, s)| if *s == 0 { 0.0 } else { *c as f64 / *s as f64 })
            .collect();
        let population_mean = per_learner.iter().sum::<f64>() / population as f64;
        Ok(Self {
            series: by_t
                .into_iter()
                .map(|(t, (c, n))| (t, c as f64 / n as f64))
                .collect(),
            per_learner,
            population_mean,
        })
    }
}
