//! Sweeps over relatedness grids and training windows.
//!
//! Cell `(r, g)` (replication `r`, grid point `g`) draws all its seeds from
//! [`cell_seeds`], so any cell can be rerun alone and results do not depend
//! on scheduling. Grid points are numbered epsilon-major over the
//! configured grids; newsvendor runs use `g = 0`.

use mtfuse::datagen::{generate_quantile_tasks, generate_related_coefficients, RelatednessSpec};
use mtfuse::tuning::{holdout_cv, kfold_cv, CvPlan, CvReport};
use mtfuse::{solve_dp, solve_stl, tau_from_costs, Dataset, Loss};
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Method, Mode, SolverSettings};
use crate::error::{config_err, data_err, Result};
use crate::fixture::generate_fixture;
use crate::ingest::{ingest_timed_csv, TimedDataset};
use crate::metrics::{average_test_loss, evaluate_metrics, MetricsReport};
use crate::report::{ResultRow, STATUS_NOT_CONVERGED};

/// Seeds of cell `(r, g)`: the first four words of ChaCha20 keyed by
/// `master` on stream `2^32 g + r`. They seed, in order, the coefficients,
/// the training data, the test data and the fold assignment.
pub fn cell_seeds(master: u64, replication: usize, grid_point: usize) -> [u64; 4] {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(((grid_point as u64) << 32) | replication as u64);
    std::array::from_fn(|_| rng.next_u64())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match cfg.mode {
        Mode::Synthetic => run_synthetic_experiment(cfg),
        Mode::Newsvendor => run_newsvendor_sweep(cfg),
    }
}

struct Fit {
    theta: Vec<Vec<f64>>,
    c: Option<f64>,
    lambda: Option<f64>,
    converged: bool,
}

fn fused_fit(report: CvReport<f64>) -> Fit {
    Fit {
        converged: report.refit.diagnostics.converged,
        c: Some(report.chosen_c),
        lambda: Some(report.chosen_lambda),
        theta: report.refit.theta_hat,
    }
}

fn fit_method(method: Method, data: &Dataset, spec: &Loss, solver: &SolverSettings, tune: impl Fn() -> mtfuse::Result<CvReport<f64>>) -> mtfuse::Result<Fit> {
    let plain = |theta| Fit { theta, c: None, lambda: None, converged: true };
    match method {
        Method::Fused => tune().map(fused_fit),
        Method::Stl => {
            let theta = data.tasks().iter().map(|t| solve_stl(t, spec, &solver.inner())).collect::<mtfuse::Result<Vec<_>>>()?;
            Ok(plain(theta))
        }
        Method::Dp => {
            let beta = solve_dp(data, spec, None, &solver.inner())?;
            Ok(plain(vec![beta; data.num_tasks()]))
        }
    }
}

fn finish(row: ResultRow, fit: mtfuse::Result<Fit>, score: impl FnOnce(&[Vec<f64>]) -> Result<MetricsReport>) -> ResultRow {
    let fit = match fit {
        Ok(f) => f,
        Err(e) => return row.failed(&e),
    };
    let mut row = ResultRow { c: fit.c, lambda: fit.lambda, ..row };
    if !fit.converged {
        row.status = STATUS_NOT_CONVERGED.into();
    }
    match score(&fit.theta) {
        Ok(m) => row.with_metrics(&m),
        Err(e) => row.failed(&e),
    }
}

/// The synthetic sweep: per cell, generate tasks, tune the fused penalty by
/// k-fold CV, fit every method and score it against the true coefficients
/// and a fresh test sample.
pub fn run_synthetic_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if cfg.mode != Mode::Synthetic {
        return Err(config_err("not a synthetic experiment"));
    }
    let s = &cfg.scale;
    let spec = Loss::check(s.tau)?;
    let grid: Vec<(f64, f64)> = cfg.epsilons.iter().flat_map(|&e| cfg.deltas.iter().map(move |&d| (e, d))).collect();
    let cells: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..cfg.replications).map(move |r| (g, r))).collect();
    let rows: Vec<Vec<ResultRow>> = cells
        .par_iter()
        .map(|&(g, r)| {
            let (epsilon, delta) = grid[g];
            let seeds = cell_seeds(cfg.seed, r, g);
            let template = ResultRow {
                epsilon: Some(epsilon),
                delta: Some(delta),
                replication: r,
                seed: seeds[0],
                ..ResultRow::new("synthetic", "")
            };
            let rel = RelatednessSpec { m: s.m, epsilon, delta, dim: s.dim, signal: s.signal, seed: seeds[0] };
            let prepared = generate_related_coefficients(&rel).and_then(|truth| {
                let train = generate_quantile_tasks(&truth, s.n, s.tau, s.noise_sd, seeds[1])?;
                let test = generate_quantile_tasks(&truth, s.n_test, s.tau, s.noise_sd, seeds[2])?;
                let star = truth.theta_star(s.tau, s.noise_sd)?;
                Ok((truth, train, test, star))
            });
            let (truth, train, test, star) = match prepared {
                Ok(p) => p,
                Err(e) => return cfg.methods.iter().map(|m| ResultRow { method: m.name().into(), ..template.clone() }.failed(&e)).collect(),
            };
            let plan = cfg.cv.kfold(seeds[3]);
            let base = cfg.solver.fusion(s.m);
            cfg.methods
                .iter()
                .map(|&m| {
                    let row = ResultRow { method: m.name().into(), ..template.clone() };
                    let fit = fit_method(m, &train, &spec, &cfg.solver, || kfold_cv(&train, &spec, &plan, &base));
                    finish(row, fit, |theta| {
                        let mut metrics = evaluate_metrics(theta, &star, &truth.inliers)?;
                        metrics.avg_test_loss = Some(average_test_loss(&spec, theta, &test)?);
                        Ok(metrics)
                    })
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Training and test samples of every task for one window length.
pub struct WindowSplit {
    pub train: Dataset,
    pub test: Dataset,
    /// Indices into each task's samples.
    pub train_index: Vec<Vec<usize>>,
    pub test_index: Vec<Vec<usize>>,
}

/// The test window is the last `test_months` months present in the data;
/// training uses the `months` months right before it.
pub fn window_split(data: &TimedDataset, months: usize, test_months: usize) -> Result<WindowSplit> {
    let tasks = data.data.tasks();
    if data.periods.len() != tasks.len() || data.periods.iter().zip(tasks).any(|(p, t)| p.len() != t.len()) {
        return Err(data_err("period labels do not match the samples"));
    }
    if let Some(t) = tasks.iter().zip(&data.periods).find(|(_, p)| p.windows(2).any(|w| w[0] > w[1])) {
        return Err(data_err(format!("task {:?} is not in time order", t.0.task_id())));
    }
    let last = data.periods.iter().filter_map(|p| p.last()).max().copied().ok_or_else(|| data_err("no samples"))?;
    let first = data.periods.iter().filter_map(|p| p.first()).min().copied().ok_or_else(|| data_err("no samples"))?;
    let test_start = last - test_months as i64 + 1;
    let history = (test_start - first).max(0) as usize;
    if months > history {
        return Err(mtfuse::Error::InvalidInput(format!("a {months}-month window exceeds the {history} months of history")).into());
    }
    let train_start = test_start - months as i64;
    let (mut train_index, mut test_index) = (Vec::new(), Vec::new());
    let mut train = Vec::with_capacity(tasks.len());
    let mut test = Vec::with_capacity(tasks.len());
    for (task, p) in tasks.iter().zip(&data.periods) {
        let tr: Vec<usize> = (0..task.len()).filter(|&i| p[i] >= train_start && p[i] < test_start).collect();
        let te: Vec<usize> = (0..task.len()).filter(|&i| p[i] >= test_start).collect();
        if tr.is_empty() {
            return Err(mtfuse::Error::InvalidInput(format!("task {:?} has no samples in the {months}-month training window", task.task_id())).into());
        }
        if te.is_empty() {
            return Err(mtfuse::Error::InvalidInput(format!("task {:?} has no samples in the test window", task.task_id())).into());
        }
        train.push(task.select(&tr)?);
        test.push(task.select(&te)?);
        train_index.push(tr);
        test_index.push(te);
    }
    Ok(WindowSplit { train: Dataset::new(train)?, test: Dataset::new(test)?, train_index, test_index })
}

/// Fits every method on each training window and scores the average loss
/// on the common test window. Rows carry replication 0.
pub fn run_newsvendor_experiment(
    data: &TimedDataset,
    months: &[usize],
    test_months: usize,
    spec: &Loss,
    plan: &CvPlan<f64>,
    methods: &[Method],
    solver: &SolverSettings,
) -> Result<Vec<ResultRow>> {
    plan.validate()?;
    let splits = months.iter().map(|&k| window_split(data, k, test_months)).collect::<Result<Vec<_>>>()?;
    let m = data.data.num_tasks();
    let base = solver.fusion(m);
    let rows: Vec<Vec<ResultRow>> = months
        .par_iter()
        .zip(&splits)
        .map(|(&k, split)| {
            methods
                .iter()
                .map(|&method| {
                    let row = ResultRow { months: Some(k), ..ResultRow::new("newsvendor", method.name()) };
                    let fit = fit_method(method, &split.train, spec, solver, || holdout_cv(&split.train, spec, plan, &base));
                    finish(row, fit, |theta| {
                        Ok(MetricsReport { avg_test_loss: Some(average_test_loss(spec, theta, &split.test)?), ..MetricsReport::default() })
                    })
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// The newsvendor sweep from a config: the configured CSV once, or one
/// generated fixture per replication. Fitting and scoring use the check
/// loss at the critical ratio `b / (b + h)`: the newsvendor cost divided by
/// `b + h`, which keeps the penalty grid on the scale it was made for.
pub fn run_newsvendor_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let nv = &cfg.newsvendor;
    let spec = Loss::check(tau_from_costs(nv.backorder, nv.holding)?)?;
    let plan = cfg.cv.holdout();
    if let Some(src) = &nv.data {
        let data = ingest_timed_csv(&src.path, &src.schema())?;
        return run_newsvendor_experiment(&data, &nv.months, nv.test_months, &spec, &plan, &cfg.methods, &cfg.solver);
    }
    if nv.fixture.span_months <= nv.test_months {
        return Err(config_err("fixture span leaves no training history"));
    }
    let rows = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = cell_seeds(cfg.seed, r, 0)[0];
            let fixture = generate_fixture(&nv.fixture, seed)?;
            let rows = run_newsvendor_experiment(&fixture.data, &nv.months, nv.test_months, &spec, &plan, &cfg.methods, &cfg.solver)?;
            Ok(rows.into_iter().map(|row| ResultRow { replication: r, seed, ..row }).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}
