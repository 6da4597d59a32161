//! Result tables and their CSV files.
//!
//! `results.csv` has one row per method, grid point and replication with
//! the columns of [`ResultRow`] in declaration order. `summary.csv`
//! aggregates replications; `plotdata.csv` is the summary in long form.
//! Missing values are empty fields.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{PipelineError, Result};
use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub months: Option<usize>,
    pub replication: usize,
    pub seed: u64,
    pub c: Option<f64>,
    pub lambda: Option<f64>,
    pub max_error_all: Option<f64>,
    pub max_error_s: Option<f64>,
    pub max_error_sc: Option<f64>,
    pub avg_test_loss: Option<f64>,
    /// `ok`, `not_converged` (best iterate kept) or `error: <message>`.
    pub status: String,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_NOT_CONVERGED: &str = "not_converged";

impl ResultRow {
    pub fn new(experiment: &str, method: &str) -> Self {
        Self {
            experiment: experiment.into(),
            method: method.into(),
            epsilon: None,
            delta: None,
            months: None,
            replication: 0,
            seed: 0,
            c: None,
            lambda: None,
            max_error_all: None,
            max_error_s: None,
            max_error_sc: None,
            avg_test_loss: None,
            status: STATUS_OK.into(),
        }
    }

    pub fn with_metrics(mut self, m: &MetricsReport) -> Self {
        self.max_error_all = m.max_error_all;
        self.max_error_s = m.max_error_s;
        self.max_error_sc = m.max_error_sc;
        self.avg_test_loss = m.avg_test_loss;
        self
    }

    pub fn failed(mut self, err: &dyn std::fmt::Display) -> Self {
        self.status = format!("error: {err}");
        self
    }

    pub fn is_error(&self) -> bool {
        self.status.starts_with("error")
    }
}

pub const METRICS: [&str; 4] = ["max_error_all", "max_error_s", "max_error_sc", "avg_test_loss"];

fn metric(row: &ResultRow, k: usize) -> Option<f64> {
    [row.max_error_all, row.max_error_s, row.max_error_sc, row.avg_test_loss][k]
}

/// Mean and normal-approximation 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: Option<f64>,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ci95 = (values.len() > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        });
        Some(Self { mean, ci95 })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub method: String,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub months: Option<usize>,
    pub runs: usize,
    pub failed: usize,
    /// Indexed like [`METRICS`].
    pub estimates: [Option<Estimate>; 4],
}

impl SummaryRow {
    pub fn complete(&self) -> bool {
        self.failed == 0
    }

    pub fn estimate(&self, name: &str) -> Option<Estimate> {
        METRICS.iter().position(|m| *m == name).and_then(|k| self.estimates[k])
    }
}

/// Groups rows by experiment, method and grid point in order of first
/// appearance. Error rows count as runs but not as observations.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let key = |r: &ResultRow| (r.experiment.clone(), r.method.clone(), r.epsilon.map(f64::to_bits), r.delta.map(f64::to_bits), r.months);
    let mut keys = Vec::new();
    for r in rows {
        let k = key(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| key(r) == k).collect();
            let first = group[0];
            let estimates = std::array::from_fn(|m| {
                let vals: Vec<f64> = group.iter().filter(|r| !r.is_error()).filter_map(|r| metric(r, m)).collect();
                Estimate::of(&vals)
            });
            SummaryRow {
                experiment: first.experiment.clone(),
                method: first.method.clone(),
                epsilon: first.epsilon,
                delta: first.delta,
                months: first.months,
                runs: group.len(),
                failed: group.iter().filter(|r| r.is_error()).count(),
                estimates,
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| PipelineError::Write { path: path.to_path_buf(), source })
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "experiment", "method", "epsilon", "delta", "months", "replication", "seed", "c", "lambda", "max_error_all", "max_error_s",
        "max_error_sc", "avg_test_loss", "status",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| PipelineError::Csv(e.into_error().into()))
}

pub fn summary_csv(summary: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["experiment", "method", "epsilon", "delta", "months", "runs", "failed", "complete"].map(String::from).to_vec();
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_ci95"));
    }
    w.write_record(&header)?;
    for s in summary {
        let mut rec = vec![
            s.experiment.clone(),
            s.method.clone(),
            opt(s.epsilon),
            opt(s.delta),
            opt(s.months),
            s.runs.to_string(),
            s.failed.to_string(),
            s.complete().to_string(),
        ];
        for e in &s.estimates {
            rec.push(opt(e.map(|e| e.mean)));
            rec.push(opt(e.and_then(|e| e.ci95)));
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| PipelineError::Csv(e.into_error().into()))
}

/// Long form: one line per summary cell and metric, with `x` the swept
/// quantity (`delta` or `months`) and `group` the outlier fraction.
pub fn plotdata_csv(summary: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["experiment", "metric", "method", "group", "x_name", "x", "mean", "lower", "upper"])?;
    for s in summary {
        let (x_name, x) = match (s.delta, s.months) {
            (Some(d), _) => ("delta", d.to_string()),
            (None, Some(k)) => ("months", k.to_string()),
            (None, None) => ("", String::new()),
        };
        for (name, e) in METRICS.iter().zip(&s.estimates) {
            let Some(e) = e else { continue };
            let half = e.ci95.unwrap_or(0.0);
            w.write_record([
                s.experiment.clone(),
                name.to_string(),
                s.method.clone(),
                opt(s.epsilon),
                x_name.to_string(),
                x.clone(),
                e.mean.to_string(),
                (e.mean - half).to_string(),
                (e.mean + half).to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| PipelineError::Csv(e.into_error().into()))
}

/// Writes the three report files into `out_dir`, creating it if needed and
/// overwriting earlier files.
pub fn emit_report(rows: &[ResultRow], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|source| PipelineError::Write { path: out_dir.to_path_buf(), source })?;
    let summary = summarize(rows);
    write_file(&out_dir.join("results.csv"), results_csv(rows)?)?;
    write_file(&out_dir.join("summary.csv"), summary_csv(&summary)?)?;
    write_file(&out_dir.join("plotdata.csv"), plotdata_csv(&summary)?)?;
    Ok(())
}
