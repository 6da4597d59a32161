use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mtfuse::datagen::{generate_quantile_tasks, generate_related_coefficients, RelatednessSpec};
use mtfuse::tuning::{holdout_cv, kfold_cv, lambda_grid, CvReport};
use mtfuse::{solve_dp, solve_fused, solve_stl, Config, Dataset, Loss};

use crate::config::{DataSource, ExperimentConfig, Method, Mode};
use crate::error::{config_err, PipelineError, Result};
use crate::experiment::run_experiment;
use crate::ingest::{ingest_csv, write_dataset_csv, IngestSchema};
use crate::report::{emit_report, summarize};

#[derive(Debug, Parser)]
#[command(name = "mtfuse", version, about = "Multi-task fusion estimation: fits, tuning and experiment sweeps")]
pub struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic quantile-regression dataset as CSV.
    Synth(SynthArgs),
    /// Fit one method to a CSV dataset and print the coefficients.
    Fit(FitArgs),
    /// Cross-validate the fused penalty on a CSV dataset.
    Cv(CvArgs),
    /// Run a sweep from a config file and write the report files.
    Experiment(ExperimentArgs),
    /// Run the windowed newsvendor pipeline.
    Newsvendor(NewsvendorArgs),
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    #[arg(long, default_value = "task")]
    pub task_col: String,
    #[arg(long, default_value = "y")]
    pub response_col: String,
    /// Comma-separated covariate columns; all other columns by default.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Do not prepend a constant covariate.
    #[arg(long)]
    pub no_intercept: bool,
}

impl SchemaArgs {
    fn schema(&self, time: Option<String>) -> IngestSchema {
        IngestSchema {
            task: self.task_col.clone(),
            response: self.response_col.clone(),
            covariates: self.covariates.clone(),
            add_intercept: !self.no_intercept,
            time,
        }
    }
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Quantile level of the check loss.
    #[arg(long, conflicts_with_all = ["backorder", "holding"])]
    pub tau: Option<f64>,
    /// Newsvendor backorder cost per unit (needs --holding).
    #[arg(long, requires = "holding")]
    pub backorder: Option<f64>,
    /// Newsvendor holding cost per unit (needs --backorder).
    #[arg(long, requires = "backorder")]
    pub holding: Option<f64>,
}

impl LossArgs {
    fn loss(&self, cfg: &ExperimentConfig) -> Result<Loss> {
        let spec = match (self.backorder, self.holding) {
            (Some(b), Some(h)) => Loss::newsvendor(b, h),
            _ => Loss::check(self.tau.unwrap_or(cfg.scale.tau)),
        };
        spec.map_err(|e| config_err(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the true coefficients and inlier flags here.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long, default_value = "fused")]
    pub method: String,
    /// Fused penalty; overrides --c.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Penalty constant in `lambda = C sqrt(d / n)`.
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Coefficient file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long, conflicts_with = "holdout")]
    pub folds: Option<usize>,
    /// Time-ordered split with this training share instead of k folds.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NewsvendorArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Time-ordered CSV; a generated fixture when absent.
    #[arg(long, requires = "time_col")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub time_col: Option<String>,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long)]
    pub backorder: Option<f64>,
    #[arg(long)]
    pub holding: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub months: Vec<usize>,
    #[arg(long)]
    pub test_months: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|source| PipelineError::Write { path: p.to_path_buf(), source })?),
        None => Box::new(io::stdout().lock()),
    })
}

/// Parses `args` and runs the command.
pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| config_err(e.to_string()))?;
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| config_err(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Cv(a) => cv(a),
        Command::Experiment(a) => experiment(a),
        Command::Newsvendor(a) => newsvendor(a),
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut s = cfg.scale.clone();
    s.m = a.m.unwrap_or(s.m);
    s.n = a.n.unwrap_or(s.n);
    s.dim = a.dim.unwrap_or(s.dim);
    s.tau = a.tau.unwrap_or(s.tau);
    s.noise_sd = a.noise_sd.unwrap_or(s.noise_sd);
    let epsilon = a.epsilon.unwrap_or(cfg.epsilons[0]);
    let delta = a.delta.unwrap_or(cfg.deltas[0]);
    let seed = a.seed.unwrap_or(cfg.seed);
    let spec = RelatednessSpec { m: s.m, epsilon, delta, dim: s.dim, signal: s.signal, seed };
    let truth = generate_related_coefficients(&spec).map_err(|e| config_err(e.to_string()))?;
    let data = generate_quantile_tasks(&truth, s.n, s.tau, s.noise_sd, seed.wrapping_add(1)).map_err(|e| config_err(e.to_string()))?;
    write_dataset_csv(output(a.out.as_deref())?, &data, None, true)?;
    if let Some(path) = &a.truth {
        let theta = truth.theta_star(s.tau, s.noise_sd)?;
        let mut w = csv::Writer::from_writer(output(Some(path))?);
        let mut header = vec!["task".to_string(), "inlier".to_string()];
        header.extend((0..=s.dim).map(|k| format!("theta{k}")));
        w.write_record(&header)?;
        for (j, (task, th)) in data.tasks().iter().zip(&theta).enumerate() {
            let mut rec = vec![task.task_id().to_string(), truth.is_inlier(j).to_string()];
            rec.extend(th.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| PipelineError::Write { path: path.clone(), source })?;
    }
    Ok(())
}

fn write_coefficients(out: Box<dyn Write>, data: &Dataset, theta: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["task".to_string()];
    header.extend((0..data.dim()).map(|k| format!("theta{k}")));
    w.write_record(&header)?;
    for (task, th) in data.tasks().iter().zip(theta) {
        let mut rec = vec![task.task_id().to_string()];
        rec.extend(th.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| PipelineError::Csv(e.into()))?;
    Ok(())
}

fn mean_size(data: &Dataset) -> f64 {
    data.total_samples() as f64 / data.num_tasks() as f64
}

fn fit(a: FitArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let spec = a.loss.loss(&cfg)?;
    let method: Method = a.method.parse()?;
    let data = ingest_csv(&a.data, &a.schema.schema(None))?;
    let m = data.num_tasks();
    let theta = match method {
        Method::Fused => {
            let lambda = a.lambda.unwrap_or_else(|| lambda_grid(data.dim(), mean_size(&data), &[a.c])[0]);
            let config = Config { lambdas: vec![lambda; m], ..cfg.solver.fusion(m) };
            let sol = solve_fused(&data, &spec, &config)?;
            eprintln!(
                "lambda {lambda}  objective {}  pooled {}/{m}  iterations {}",
                sol.objective,
                sol.num_pooled(),
                sol.diagnostics.iterations
            );
            sol.theta_hat
        }
        Method::Stl => data.tasks().iter().map(|t| solve_stl(t, &spec, &cfg.solver.inner())).collect::<mtfuse::Result<_>>()?,
        Method::Dp => vec![solve_dp(&data, &spec, None, &cfg.solver.inner())?; m],
    };
    write_coefficients(output(a.out.as_deref())?, &data, &theta)
}

fn print_cv(report: &CvReport<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["c", "score", "chosen"])?;
    for (i, (c, s)) in report.c_grid.iter().zip(&report.scores).enumerate() {
        w.write_record([c.to_string(), s.to_string(), (i == report.chosen_index).to_string()])?;
    }
    w.flush().map_err(|e| PipelineError::Csv(e.into()))?;
    eprintln!("chosen C {}  lambda {}", report.chosen_c, report.chosen_lambda);
    Ok(())
}

fn cv(a: CvArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let spec = a.loss.loss(&cfg)?;
    if !a.c_grid.is_empty() {
        cfg.cv.c_grid = a.c_grid.clone();
    }
    cfg.cv.folds = a.folds.unwrap_or(cfg.cv.folds);
    let data = ingest_csv(&a.data, &a.schema.schema(None))?;
    let base = cfg.solver.fusion(data.num_tasks());
    let report = match a.holdout {
        Some(f) => {
            cfg.cv.holdout_fraction = f;
            let plan = cfg.cv.holdout();
            plan.validate().map_err(|e| config_err(e.to_string()))?;
            holdout_cv(&data, &spec, &plan, &base)?
        }
        None => {
            let plan = cfg.cv.kfold(a.seed.unwrap_or(cfg.seed));
            plan.validate().map_err(|e| config_err(e.to_string()))?;
            kfold_cv(&data, &spec, &plan, &base)?
        }
    };
    print_cv(&report)
}

fn report_rows(cfg: &ExperimentConfig) -> Result<()> {
    let rows = run_experiment(cfg)?;
    emit_report(&rows, &cfg.out_dir)?;
    let summary = summarize(&rows);
    let failed: usize = summary.iter().map(|s| s.failed).sum();
    eprintln!("{} rows, {} cells, {failed} failed runs -> {}", rows.len(), summary.len(), cfg.out_dir.display());
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    cfg.out_dir = a.out.unwrap_or(cfg.out_dir);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.replications = a.replications.unwrap_or(cfg.replications);
    cfg.validate()?;
    report_rows(&cfg)
}

fn newsvendor(a: NewsvendorArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.mode = Mode::Newsvendor;
    let nv = &mut cfg.newsvendor;
    nv.backorder = a.backorder.unwrap_or(nv.backorder);
    nv.holding = a.holding.unwrap_or(nv.holding);
    if !a.months.is_empty() {
        nv.months = a.months.clone();
    }
    nv.test_months = a.test_months.unwrap_or(nv.test_months);
    if let (Some(path), Some(time)) = (a.data, a.time_col) {
        let s = a.schema.schema(Some(time.clone()));
        nv.data = Some(DataSource { path, task: s.task, response: s.response, covariates: s.covariates, add_intercept: s.add_intercept, time });
    }
    cfg.out_dir = a.out.unwrap_or(cfg.out_dir);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.replications = a.replications.unwrap_or(cfg.replications);
    cfg.validate()?;
    report_rows(&cfg)
}
