//! CSV ingestion. One row per sample; rows are grouped into tasks by the
//! task column, in order of first appearance, and keep their file order
//! within a task.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use mtfuse::{Dataset, Sample, Task};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSchema {
    pub task: String,
    pub response: String,
    /// Ordered covariate columns. Empty means every column not otherwise named.
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "yes")]
    pub add_intercept: bool,
    /// Period column for time-ordered work: an integer month index,
    /// `YYYY-MM` or `YYYY-MM-DD`.
    #[serde(default)]
    pub time: Option<String>,
}

fn yes() -> bool {
    true
}

impl Default for IngestSchema {
    fn default() -> Self {
        Self { task: "task".into(), response: "y".into(), covariates: Vec::new(), add_intercept: true, time: None }
    }
}

impl IngestSchema {
    pub fn new(task: &str, response: &str, covariates: &[&str]) -> Self {
        Self {
            task: task.into(),
            response: response.into(),
            covariates: covariates.iter().map(|c| c.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn with_time(mut self, column: &str) -> Self {
        self.time = Some(column.into());
        self
    }

    fn named(&self) -> Vec<&str> {
        let mut v = vec![self.task.as_str(), self.response.as_str()];
        v.extend(self.time.as_deref());
        v
    }

    /// Covariate list against a header, filling in the default.
    fn resolve(&self, header: &[&str]) -> Result<Vec<String>> {
        let named = self.named();
        let covs: Vec<String> = if self.covariates.is_empty() {
            header.iter().filter(|h| !named.contains(h)).map(|h| h.to_string()).collect()
        } else {
            self.covariates.clone()
        };
        let mut all: Vec<&str> = named.clone();
        all.extend(covs.iter().map(String::as_str));
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = all.iter().find(|c| !seen.insert(**c)) {
            return Err(config_err(format!("column {dup:?} is named twice in the schema")));
        }
        if covs.is_empty() {
            return Err(config_err("schema needs at least one covariate"));
        }
        Ok(covs)
    }
}

/// A dataset whose samples carry a month index.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedDataset {
    pub data: Dataset,
    /// `periods[j][i]` is the month of sample `i` of task `j`.
    pub periods: Vec<Vec<i64>>,
}

/// Month index `12 * year + month - 1` of a date, or the integer itself.
pub fn month_index(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let date = NaiveDate::parse_from_str(s, "%Y-%m-%d").or_else(|_| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d")).ok()?;
    Some(i64::from(date.year()) * 12 + i64::from(date.month0()))
}

/// `YYYY-MM` for a month index.
pub fn month_label(index: i64) -> String {
    format!("{:04}-{:02}", index.div_euclid(12), index.rem_euclid(12) + 1)
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &IngestSchema) -> Result<Dataset> {
    Ok(ingest_reader(open(path.as_ref())?, schema)?.0)
}

/// Like [`ingest_csv`] but also reads the schema's time column.
pub fn ingest_timed_csv(path: impl AsRef<Path>, schema: &IngestSchema) -> Result<TimedDataset> {
    if schema.time.is_none() {
        return Err(config_err("time-ordered data needs a time column in the schema"));
    }
    let (data, periods) = ingest_reader(open(path.as_ref())?, schema)?;
    Ok(TimedDataset { data, periods: periods.expect("time column requested") })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| PipelineError::Read { path: path.to_path_buf(), source })
}

fn column(header: &[&str], name: &str) -> Result<usize> {
    header.iter().position(|h| *h == name).ok_or_else(|| PipelineError::MissingColumn(name.to_string()))
}

/// Parses CSV text. Rows in errors count data records from 1.
pub fn ingest_reader<R: Read>(reader: R, schema: &IngestSchema) -> Result<(Dataset, Option<Vec<Vec<i64>>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let covs = schema.resolve(&hdr)?;
    let task_col = column(&hdr, &schema.task)?;
    let resp_col = column(&hdr, &schema.response)?;
    let time_col = schema.time.as_deref().map(|t| column(&hdr, t)).transpose()?;
    let cov_cols = covs.iter().map(|c| column(&hdr, c)).collect::<Result<Vec<_>>>()?;

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<Sample>, Vec<i64>)> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let num = |col: usize| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PipelineError::Parse { row, column: header[col].clone(), value: raw.to_string() })
        };
        let y = num(resp_col)?;
        let mut x = Vec::with_capacity(cov_cols.len() + 1);
        if schema.add_intercept {
            x.push(1.0);
        }
        for &c in &cov_cols {
            x.push(num(c)?);
        }
        let period = match time_col {
            Some(c) => {
                let raw = rec.get(c).unwrap_or("");
                Some(month_index(raw).ok_or_else(|| PipelineError::Parse { row, column: header[c].clone(), value: raw.to_string() })?)
            }
            None => None,
        };
        let name = rec.get(task_col).unwrap_or("").to_string();
        let g = *index.entry(name.clone()).or_insert_with(|| {
            groups.push((name, Vec::new(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(Sample::new(x, y));
        groups[g].2.extend(period);
    }
    if groups.is_empty() {
        return Err(data_err("no data rows"));
    }
    let mut periods = Vec::with_capacity(groups.len());
    let tasks = groups
        .into_iter()
        .map(|(name, samples, p)| {
            periods.push(p);
            Task::new(name, samples)
        })
        .collect::<mtfuse::Result<Vec<_>>>()?;
    Ok((Dataset::new(tasks)?, time_col.map(|_| periods)))
}

/// Writes `task,[month,]y,x1..` with the leading intercept column dropped
/// when `drop_intercept` is set, so the file ingests back under the
/// default schema.
pub fn write_dataset_csv<W: Write>(out: W, data: &Dataset, periods: Option<&[Vec<i64>]>, drop_intercept: bool) -> Result<()> {
    let skip = usize::from(drop_intercept);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["task".to_string()];
    if periods.is_some() {
        header.push("month".into());
    }
    header.push("y".into());
    header.extend((1..=data.dim() - skip).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (j, task) in data.tasks().iter().enumerate() {
        for (i, s) in task.samples().iter().enumerate() {
            let mut rec = vec![task.task_id().to_string()];
            if let Some(p) = periods {
                rec.push(month_label(p[j][i]));
            }
            rec.push(s.response.to_string());
            rec.extend(s.covariates[skip..].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| PipelineError::Csv(e.into()))?;
    Ok(())
}
