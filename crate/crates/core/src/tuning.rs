//! Penalty selection over the grid `lambda = C sqrt(d / n)`.
//!
//! Folds are drawn within each task, so every task is represented in every
//! fold. `n` is the mean task size of whatever sample the fit uses: the
//! training part inside cross-validation, the full data for the refit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, param_err, Error, BestIterate, Result};
use crate::losses::{empirical_risk, LossSpec, MultiTaskDataset, TaskDataset};
use crate::scalar::{pairwise_sum, Scalar};
use crate::solver::{solve_fused, FusionConfig, FusionSolution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Split<T> {
    KFold { k: usize },
    /// Time-ordered: the first `train_fraction` of each task trains.
    Holdout { train_fraction: T },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPlan<T> {
    pub c_grid: Vec<T>,
    pub split: Split<T>,
    #[serde(default)]
    pub seed: u64,
}

impl<T: Scalar> CvPlan<T> {
    /// `{0.1, 0.2, ..., 1.0}`.
    pub fn default_grid() -> Vec<T> {
        (1..=10).map(|i| T::lit(f64::from(i) / 10.0)).collect()
    }

    pub fn kfold(k: usize, seed: u64) -> Self {
        Self { c_grid: Self::default_grid(), split: Split::KFold { k }, seed }
    }

    pub fn holdout(train_fraction: T) -> Self {
        Self { c_grid: Self::default_grid(), split: Split::Holdout { train_fraction }, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), T> {
        if self.c_grid.is_empty() || self.c_grid.iter().any(|&c| !(c > T::zero()) || !c.is_finite()) {
            return Err(param_err("C grid must be nonempty and positive"));
        }
        match self.split {
            Split::KFold { k } if k < 2 => Err(param_err(format!("need at least 2 folds, got {k}"))),
            Split::Holdout { train_fraction: f } if !(f > T::zero() && f < T::one()) => {
                Err(param_err(format!("training fraction must lie in (0, 1), got {f}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport<T> {
    pub c_grid: Vec<T>,
    /// Mean validation score per grid point.
    pub scores: Vec<T>,
    /// `fold_scores[c][f]`.
    pub fold_scores: Vec<Vec<T>>,
    pub chosen_index: usize,
    pub chosen_c: T,
    pub chosen_lambda: T,
    pub refit: FusionSolution<T>,
}

/// `C sqrt(d / n)` for each `C`.
pub fn lambda_grid<T: Scalar>(d: usize, n: T, c_grid: &[T]) -> Vec<T> {
    let r = (T::from_usize_lossy(d) / n).sqrt();
    c_grid.iter().map(|&c| c * r).collect()
}

fn mean_size<T: Scalar>(data: &MultiTaskDataset<T>) -> T {
    T::from_usize_lossy(data.total_samples()) / T::from_usize_lossy(data.num_tasks())
}

/// Per-task fold labels: a seeded shuffle, then position modulo `k`.
pub fn fold_assignment<T: Scalar>(data: &MultiTaskDataset<T>, k: usize, seed: u64) -> Vec<Vec<usize>> {
    data.tasks()
        .iter()
        .enumerate()
        .map(|(j, task)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let mut order: Vec<usize> = (0..task.len()).collect();
            order.shuffle(&mut rng);
            let mut label = vec![0; task.len()];
            for (pos, &i) in order.iter().enumerate() {
                label[i] = pos % k;
            }
            label
        })
        .collect()
}

struct Fold<T> {
    train: MultiTaskDataset<T>,
    valid: Vec<TaskDataset<T>>,
}

fn split_task<T: Scalar>(task: &TaskDataset<T>, keep: impl Fn(usize) -> bool) -> Result<(TaskDataset<T>, TaskDataset<T>), T> {
    let (tr, va): (Vec<usize>, Vec<usize>) = (0..task.len()).partition(|&i| keep(i));
    if tr.is_empty() || va.is_empty() {
        return Err(input_err(format!("task {:?} leaves an empty training or validation part", task.task_id())));
    }
    Ok((task.select(&tr)?, task.select(&va)?))
}

fn build_folds<T: Scalar>(data: &MultiTaskDataset<T>, plan: &CvPlan<T>) -> Result<Vec<Fold<T>>, T> {
    match plan.split {
        Split::KFold { k } => {
            if let Some(t) = data.tasks().iter().find(|t| t.len() < k) {
                return Err(input_err(format!("task {:?} has {} samples, fewer than {k} folds", t.task_id(), t.len())));
            }
            let labels = fold_assignment(data, k, plan.seed);
            (0..k)
                .map(|f| {
                    let mut train = Vec::new();
                    let mut valid = Vec::new();
                    for (task, lab) in data.tasks().iter().zip(&labels) {
                        let (tr, va) = split_task(task, |i| lab[i] != f)?;
                        train.push(tr);
                        valid.push(va);
                    }
                    Ok(Fold { train: MultiTaskDataset::new(train)?, valid })
                })
                .collect()
        }
        Split::Holdout { train_fraction } => {
            let mut train = Vec::new();
            let mut valid = Vec::new();
            for task in data.tasks() {
                let cut = holdout_count(task.len(), train_fraction);
                let (tr, va) = split_task(task, |i| i < cut)?;
                train.push(tr);
                valid.push(va);
            }
            Ok(vec![Fold { train: MultiTaskDataset::new(train)?, valid }])
        }
    }
}

/// Training count `floor(fraction * n)` of a time-ordered split.
pub fn holdout_count<T: Scalar>(n: usize, fraction: T) -> usize {
    (fraction * T::from_usize_lossy(n) + T::lit(1e-9)).floor().to_usize().unwrap_or(0)
}

/// A fit that ran out of iterations still yields its best iterate.
fn fit_or_best<T: Scalar>(data: &MultiTaskDataset<T>, spec: &LossSpec<T>, config: &FusionConfig<T>) -> Result<FusionSolution<T>, T> {
    match solve_fused(data, spec, config) {
        Ok(s) => Ok(s),
        Err(Error::NotConverged { best: BestIterate::Fused(s), .. }) => Ok(*s),
        Err(e) => Err(e),
    }
}

fn score<T: Scalar>(spec: &LossSpec<T>, fit: &FusionSolution<T>, valid: &[TaskDataset<T>]) -> Result<T, T> {
    let risks = valid
        .iter()
        .zip(&fit.theta_hat)
        .map(|(task, theta)| empirical_risk(spec, theta, task))
        .collect::<Result<Vec<_>, T>>()?;
    Ok(pairwise_sum(&risks) / T::from_usize_lossy(risks.len()))
}

/// Cross-validates `C` and refits on all of `data`. `base` supplies weights
/// and solver controls; its penalties are replaced.
pub fn cross_validate<T: Scalar>(
    data: &MultiTaskDataset<T>,
    spec: &LossSpec<T>,
    plan: &CvPlan<T>,
    base: &FusionConfig<T>,
) -> Result<CvReport<T>, T> {
    plan.validate()?;
    let m = data.num_tasks();
    let folds = build_folds(data, plan)?;
    let jobs: Vec<(usize, usize)> = (0..plan.c_grid.len()).flat_map(|c| (0..folds.len()).map(move |f| (c, f))).collect();
    let results = jobs
        .par_iter()
        .map(|&(c, f)| {
            let fold = &folds[f];
            let lambda = lambda_grid(fold.train.dim(), mean_size(&fold.train), &plan.c_grid[c..=c])[0];
            let config = FusionConfig { lambdas: vec![lambda; m], ..base.clone() };
            let fit = fit_or_best(&fold.train, spec, &config)?;
            score(spec, &fit, &fold.valid)
        })
        .collect::<Vec<Result<T, T>>>();
    let mut fold_scores = vec![Vec::with_capacity(folds.len()); plan.c_grid.len()];
    for ((c, _), r) in jobs.iter().zip(results) {
        fold_scores[*c].push(r?);
    }
    let scores: Vec<T> = fold_scores.iter().map(|s| pairwise_sum(s) / T::from_usize_lossy(s.len())).collect();
    let mut chosen = 0;
    for i in 1..scores.len() {
        let better = scores[i] < scores[chosen] || (scores[i] == scores[chosen] && plan.c_grid[i] < plan.c_grid[chosen]);
        if better {
            chosen = i;
        }
    }
    let chosen_c = plan.c_grid[chosen];
    let chosen_lambda = lambda_grid(data.dim(), mean_size(data), &[chosen_c])[0];
    let config = FusionConfig { lambdas: vec![chosen_lambda; m], ..base.clone() };
    let refit = fit_or_best(data, spec, &config)?;
    Ok(CvReport { c_grid: plan.c_grid.clone(), scores, fold_scores, chosen_index: chosen, chosen_c, chosen_lambda, refit })
}

/// `k`-fold cross-validation with seeded within-task folds.
pub fn kfold_cv<T: Scalar>(data: &MultiTaskDataset<T>, spec: &LossSpec<T>, plan: &CvPlan<T>, base: &FusionConfig<T>) -> Result<CvReport<T>, T> {
    match plan.split {
        Split::KFold { .. } => cross_validate(data, spec, plan, base),
        Split::Holdout { .. } => Err(param_err("kfold_cv needs a k-fold plan")),
    }
}

/// Time-ordered holdout: fit on the leading fraction of every task, score
/// on the rest, refit on everything.
pub fn holdout_cv<T: Scalar>(data: &MultiTaskDataset<T>, spec: &LossSpec<T>, plan: &CvPlan<T>, base: &FusionConfig<T>) -> Result<CvReport<T>, T> {
    match plan.split {
        Split::Holdout { .. } => cross_validate(data, spec, plan, base),
        Split::KFold { .. } => Err(param_err("holdout_cv needs a holdout plan")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_grid_examples() {
        let l = lambda_grid(21, 200.0f64, &[0.1]);
        assert!((l[0] - 0.032_403_703_492_039_3).abs() < 1e-15);
        assert_eq!(lambda_grid(7, 7.0, &[1.0]), vec![1.0]);
        let g = lambda_grid(10, 100.0, &CvPlan::<f64>::default_grid());
        assert_eq!(g.len(), 10);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn holdout_counts() {
        assert_eq!(holdout_count(10, 0.8), 8);
        assert_eq!(holdout_count(5, 0.8), 4);
        assert_eq!(holdout_count(1, 0.8), 0);
    }

    #[test]
    fn plan_validation() {
        assert!(CvPlan::<f64>::kfold(1, 0).validate().is_err());
        assert!(CvPlan::holdout(1.0).validate().is_err());
        let mut p = CvPlan::<f64>::kfold(5, 0);
        p.c_grid.clear();
        assert!(p.validate().is_err());
    }
}
