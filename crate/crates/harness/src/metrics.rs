//! Trace records, checkpoint aggregation and CSV I/O.

use std::io::{Read, Write};

use robcomp_core::data::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Mean square error `(1/n) Σ (wᵀx_i − y_i)²`.
pub fn evaluate_mse(w: &[f64], test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(HarnessError::Data("cannot evaluate MSE on an empty set".into()));
    }
    if w.len() < test.dim {
        return Err(HarnessError::Data(format!(
            "model has {} coefficients, data has {} features",
            w.len(),
            test.dim
        )));
    }
    let sum: f64 = test
        .features
        .iter()
        .zip(&test.labels)
        .map(|(x, y)| (x.dot(w) - y).powi(2))
        .sum();
    Ok(sum / test.len() as f64)
}

/// One row of `trace_trial{t}.csv`. Truncation columns are cumulative counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub samples: u64,
    pub objective: Option<f64>,
    pub gap: Option<f64>,
    pub mse: Option<f64>,
    pub trunc_y: u64,
    pub trunc_z: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Gap,
    Mse,
}

impl Metric {
    pub fn of(self, r: &TraceRecord) -> Option<f64> {
        match self {
            Metric::Gap => r.gap,
            Metric::Mse => r.mse,
        }
    }

    /// `mse` when every record carries it, else `gap`.
    pub fn detect(traces: &[Vec<TraceRecord>]) -> Metric {
        let all_mse = traces.iter().flatten().all(|r| r.mse.is_some());
        if all_mse && traces.iter().any(|t| !t.is_empty()) {
            Metric::Mse
        } else {
            Metric::Gap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub samples: u64,
    pub mean: f64,
    pub std: f64,
}

/// `min(count, budget)` distinct sample counts spaced evenly in log scale over
/// `[1, budget]`, rounded. A count that rounds onto its predecessor moves up
/// by one. Always ends at `budget`.
pub fn log_checkpoints(budget: u64, count: usize) -> Vec<u64> {
    let count = count.min(usize::try_from(budget).unwrap_or(usize::MAX));
    if count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![budget];
    }
    let top = (budget as f64).ln();
    let mut out: Vec<u64> = Vec::with_capacity(count);
    for i in 0..count {
        let slots_left = (count - 1 - i) as u64;
        let c = (top * i as f64 / (count - 1) as f64).exp().round() as u64;
        let floor = out.last().map_or(1, |p| p + 1);
        out.push(c.max(floor).min(budget - slots_left));
    }
    out
}

/// Value of the last record with `samples <= at` (last value carried
/// forward); the first record's value before any record is reached.
pub fn value_at(trace: &[TraceRecord], at: u64, metric: Metric) -> Option<f64> {
    let idx = trace.partition_point(|r| r.samples <= at);
    let r = if idx == 0 { trace.first()? } else { &trace[idx - 1] };
    metric.of(r)
}

/// Mean and sample standard deviation (n − 1 denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // shifted by the first value, so identical inputs give exactly zero spread
    let x0 = values[0];
    let mean = x0 + values.iter().map(|v| v - x0).sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Per checkpoint, mean and std of the metric over traces that define it.
pub fn aggregate_trials(traces: &[Vec<TraceRecord>], grid: &[u64], metric: Metric) -> Vec<AggregateRow> {
    grid.iter()
        .map(|&c| {
            let vals: Vec<f64> = traces.iter().filter_map(|t| value_at(t, c, metric)).collect();
            let (mean, std) = mean_std(&vals);
            AggregateRow { samples: c, mean, std }
        })
        .collect()
}

pub fn write_trace(records: &[TraceRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["iter", "samples", "objective", "gap", "mse", "trunc_y", "trunc_z"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(input: impl Read) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let want = ["iter", "samples", "objective", "gap", "mse", "trunc_y", "trunc_z"];
    if header.iter().ne(want) {
        return Err(HarnessError::Data(format!("unexpected trace header {header:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_aggregate(rows: &[AggregateRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["samples", "mean", "std"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate(input: impl Read) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
