//! Result rows, CSV output and the JSON summary.
//!
//! `results.csv` columns, in order:
//!
//! | column    | meaning                                                     |
//! |-----------|-------------------------------------------------------------|
//! | kind      | experiment kind                                             |
//! | trial_id  | 0-based trial index                                         |
//! | seed      | per-trial seed derived from the master seed                 |
//! | params    | `key=value` echo of the shaping parameters                  |
//! | metric    | metric name                                                 |
//! | value     | metric value (shortest round-trip decimal, `NaN` on error)  |
//! | threshold | acceptance bound, empty for informational metrics           |
//! | pass      | `true`/`false`, empty for informational metrics             |
//! | detail    | free text; error messages of failed trials land here        |
//!
//! Rows are sorted by `(kind, trial_id, metric)`. Wall times go to a
//! separate `timings.csv` (`kind,trial_id,seed,wall_ms`) so that the results
//! file is byte-identical across runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub kind: ExperimentKind,
    pub trial_id: u64,
    pub seed: u64,
    pub params: String,
    pub metric: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub pass: Option<bool>,
    pub detail: String,
}

impl ResultRow {
    pub fn sort_key(&self) -> (ExperimentKind, u64, &str) {
        (self.kind, self.trial_id, self.metric.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub kind: ExperimentKind,
    pub trial_id: u64,
    pub seed: u64,
    pub wall_ms: f64,
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    // Header comes from the first serialized record; keep it for empty runs.
    if rows.is_empty() {
        w.write_record(["kind", "trial_id", "seed", "params", "metric", "value", "threshold", "pass", "detail"])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub count: usize,
    /// Rows with a non-finite value (failed trials).
    pub failed: usize,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub passes: Option<u64>,
    pub pass_rate: Option<f64>,
    pub wilson95: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: u64,
    pub params: String,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Trials whose thresholded rows all pass.
    pub trials_passed: u64,
    pub trial_pass_rate: f64,
    pub trial_wilson95: (f64, f64),
    pub min_pass_rate: f64,
    pub all_pass: bool,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let k = values.len();
    Some(if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    })
}

fn summarize_metric(rows: &[&ResultRow]) -> MetricSummary {
    let mut finite: Vec<f64> = rows.iter().map(|r| r.value).filter(|v| v.is_finite()).collect();
    let judged: Vec<bool> = rows.iter().filter_map(|r| r.pass).collect();
    let passes = judged.iter().filter(|&&p| p).count() as u64;
    let (passes, pass_rate, wilson95) = if judged.is_empty() {
        (None, None, None)
    } else {
        let n = judged.len() as u64;
        (
            Some(passes),
            Some(passes as f64 / n as f64),
            Some(smoothed::ensembles::wilson_interval(passes, n, 1.96)),
        )
    };
    MetricSummary {
        count: rows.len(),
        failed: rows.len() - finite.len(),
        min: finite.iter().copied().reduce(f64::min),
        max: finite.iter().copied().reduce(f64::max),
        median: median(&mut finite),
        passes,
        pass_rate,
        wilson95,
    }
}

pub fn summarize(
    kind: ExperimentKind,
    seed: u64,
    trials: u64,
    params: String,
    min_pass_rate: f64,
    rows: &[ResultRow],
) -> Summary {
    let mut by_metric: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    let mut trial_ok: BTreeMap<u64, bool> = (0..trials).map(|t| (t, true)).collect();
    for r in rows {
        by_metric.entry(r.metric.as_str()).or_default().push(r);
        if r.pass == Some(false) {
            trial_ok.insert(r.trial_id, false);
        }
    }
    let trials_passed = trial_ok.values().filter(|&&ok| ok).count() as u64;
    let rate = trials_passed as f64 / trials.max(1) as f64;
    Summary {
        kind,
        seed,
        trials,
        params,
        metrics: by_metric
            .into_iter()
            .map(|(k, v)| (k.to_string(), summarize_metric(&v)))
            .collect(),
        trials_passed,
        trial_pass_rate: rate,
        trial_wilson95: smoothed::ensembles::wilson_interval(trials_passed, trials, 1.96),
        min_pass_rate,
        all_pass: rate >= min_pass_rate,
    }
}
