//! Experiment configuration, read from TOML. Every field has a default, so
//! a file only lists what it changes.

use std::path::{Path, PathBuf};

use mtfuse::tuning::{CvPlan, Split};
use mtfuse::{Config, InnerOptions};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, PipelineError, Result};
use crate::fixture::FixtureSpec;
use crate::ingest::IngestSchema;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Synthetic,
    Newsvendor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fused,
    Stl,
    Dp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fused, Method::Stl, Method::Dp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fused => "fused",
            Method::Stl => "stl",
            Method::Dp => "dp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Method::Fused),
            "stl" => Ok(Method::Stl),
            "dp" => Ok(Method::Dp),
            _ => Err(config_err(format!("unknown method {s:?} (expected fused, stl or dp)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scale {
    pub m: usize,
    /// Training samples per task.
    pub n: usize,
    /// Held-out samples per task for the test loss.
    pub n_test: usize,
    pub dim: usize,
    pub tau: f64,
    pub noise_sd: f64,
    pub signal: f64,
}

impl Default for Scale {
    fn default() -> Self {
        Self { m: 20, n: 100, n_test: 100, dim: 10, tau: 0.9, noise_sd: 0.5, signal: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub c_grid: Vec<f64>,
    /// Folds for the synthetic sweep.
    pub folds: usize,
    /// Leading share of each training window fitted during newsvendor tuning.
    pub holdout_fraction: f64,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { c_grid: CvPlan::<f64>::default_grid(), folds: 5, holdout_fraction: 0.8 }
    }
}

impl CvSettings {
    pub fn kfold(&self, seed: u64) -> CvPlan<f64> {
        CvPlan { c_grid: self.c_grid.clone(), split: Split::KFold { k: self.folds }, seed }
    }

    pub fn holdout(&self) -> CvPlan<f64> {
        CvPlan { c_grid: self.c_grid.clone(), split: Split::Holdout { train_fraction: self.holdout_fraction }, seed: 0 }
    }
}

/// ADMM controls. The defaults are looser than the library's: experiment
/// metrics are insensitive to digits past the fourth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_outer_iters: usize,
    pub admm_step: f64,
    pub inner_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol_abs: 1e-6, tol_rel: 1e-4, max_outer_iters: 5000, admm_step: 1.0, inner_tol: 1e-9 }
    }
}

impl SolverSettings {
    pub fn fusion(&self, m: usize) -> Config {
        Config {
            admm_step: self.admm_step,
            tol_abs: self.tol_abs,
            tol_rel: self.tol_rel,
            max_outer_iters: self.max_outer_iters,
            inner: self.inner(),
            ..Config::uniform(m, 0.0)
        }
    }

    pub fn inner(&self) -> InnerOptions<f64> {
        InnerOptions { tol: self.inner_tol, ..InnerOptions::default() }
    }
}

/// An external time-ordered CSV for the newsvendor pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    pub task: String,
    pub response: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "yes")]
    pub add_intercept: bool,
    pub time: String,
}

fn yes() -> bool {
    true
}

impl DataSource {
    pub fn schema(&self) -> IngestSchema {
        IngestSchema {
            task: self.task.clone(),
            response: self.response.clone(),
            covariates: self.covariates.clone(),
            add_intercept: self.add_intercept,
            time: Some(self.time.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewsvendorSettings {
    pub backorder: f64,
    pub holding: f64,
    /// Training window lengths in months.
    pub months: Vec<usize>,
    /// The test window is the last `test_months` months of the data.
    pub test_months: usize,
    /// Real data; when absent each replication generates a fixture.
    pub data: Option<DataSource>,
    pub fixture: FixtureSpec,
}

impl Default for NewsvendorSettings {
    fn default() -> Self {
        Self { backorder: 9.0, holding: 1.0, months: vec![1, 2, 3, 6, 12], test_months: 4, data: None, fixture: FixtureSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub epsilons: Vec<f64>,
    pub deltas: Vec<f64>,
    pub scale: Scale,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub cv: CvSettings,
    pub solver: SolverSettings,
    pub newsvendor: NewsvendorSettings,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Synthetic,
            epsilons: vec![0.0],
            deltas: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            scale: Scale::default(),
            replications: 20,
            methods: Method::ALL.to_vec(),
            cv: CvSettings::default(),
            solver: SolverSettings::default(),
            newsvendor: NewsvendorSettings::default(),
            out_dir: PathBuf::from("results"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(config_err("replications must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(config_err("no methods selected"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(config_err("a method is listed twice"));
        }
        self.cv.kfold(0).validate().map_err(|e| config_err(e.to_string()))?;
        self.cv.holdout().validate().map_err(|e| config_err(e.to_string()))?;
        self.solver.fusion(1).validate(1).map_err(|e| config_err(e.to_string()))?;
        match self.mode {
            Mode::Synthetic => self.validate_synthetic(),
            Mode::Newsvendor => self.validate_newsvendor(),
        }
    }

    fn validate_synthetic(&self) -> Result<()> {
        let s = &self.scale;
        if self.epsilons.is_empty() || self.deltas.is_empty() {
            return Err(config_err("epsilon and delta grids must be nonempty"));
        }
        if s.m == 0 || s.dim == 0 || s.n == 0 || s.n_test == 0 {
            return Err(config_err("m, n, n_test and dim must be positive"));
        }
        if s.n < self.cv.folds {
            return Err(config_err(format!("n = {} is smaller than the {} folds", s.n, self.cv.folds)));
        }
        if !(s.tau > 0.0 && s.tau < 1.0) || !(s.noise_sd > 0.0) {
            return Err(config_err("need tau in (0, 1) and a positive noise level"));
        }
        for &eps in &self.epsilons {
            for &delta in &self.deltas {
                let spec = mtfuse::datagen::RelatednessSpec { m: s.m, epsilon: eps, delta, dim: s.dim, signal: s.signal, seed: 0 };
                spec.validate().map_err(|e| config_err(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn validate_newsvendor(&self) -> Result<()> {
        let nv = &self.newsvendor;
        mtfuse::Loss::newsvendor(nv.backorder, nv.holding).map_err(|e| config_err(e.to_string()))?;
        if nv.months.is_empty() || nv.months.contains(&0) {
            return Err(config_err("training windows must be a nonempty list of positive month counts"));
        }
        if nv.test_months == 0 {
            return Err(config_err("test window must cover at least one month"));
        }
        if nv.data.is_none() {
            nv.fixture.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_tables() {
        let cfg = ExperimentConfig::from_toml("deltas = [0.0]\nmethods = [\"stl\"]\n[scale]\nm = 4\n").unwrap();
        assert_eq!(cfg.scale.m, 4);
        assert_eq!(cfg.scale.n, 100);
        assert_eq!(cfg.methods, vec![Method::Stl]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("replications = 0").is_err());
        assert!(ExperimentConfig::from_toml("deltas = [5.0]").is_err());
        assert!(ExperimentConfig::from_toml("typo = 1").is_err());
        assert!(ExperimentConfig::from_toml("methods = [\"svm\"]").is_err());
        assert!(ExperimentConfig::from_toml("[cv]\nfolds = 1").is_err());
    }
}
