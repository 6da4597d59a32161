//! Fused multi-task estimation, its single-task and pooled baselines, and
//! the proximal building blocks they share.

mod admm;
mod certificate;
pub(crate) mod inner;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, param_err, shape_err, BestIterate, Error, Result};
use crate::losses::{risk_with, LossSpec, MultiTaskDataset, ResidualModel, TaskDataset};
use crate::scalar::{dist2, norm2, pairwise_sum, Scalar};

pub use admm::solve_fused;
pub use certificate::{optimality_residual, pooling_threshold};

use inner::{Design, InnerControl};

/// Controls for the single-parameter solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions<T> {
    /// Target norm of the certified subgradient residual.
    pub tol: T,
    pub max_iters: usize,
}

impl<T: Scalar> Default for InnerOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-9), max_iters: 5000 }
    }
}

impl<T: Scalar> InnerOptions<T> {
    fn control(&self) -> InnerControl<T> {
        InnerControl { tol: self.tol, max_iters: self.max_iters }
    }

    fn validate(&self) -> Result<(), T> {
        if !(self.tol > T::zero()) || self.max_iters == 0 {
            return Err(param_err("inner tolerance and iteration budget must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig<T> {
    pub weights: Vec<T>,
    pub lambdas: Vec<T>,
    /// Initial ADMM penalty `sigma`.
    pub admm_step: T,
    /// Rescale `sigma` early on when the residuals, each relative to its
    /// threshold, drift apart by more than 5x.
    pub balance_step: bool,
    pub tol_abs: T,
    pub tol_rel: T,
    pub max_outer_iters: usize,
    pub inner: InnerOptions<T>,
}

impl<T: Scalar> FusionConfig<T> {
    /// Unit weights and a common penalty for `m` tasks.
    pub fn uniform(m: usize, lambda: T) -> Self {
        Self::with(vec![T::one(); m], vec![lambda; m])
    }

    pub fn with(weights: Vec<T>, lambdas: Vec<T>) -> Self {
        Self {
            weights,
            lambdas,
            admm_step: T::one(),
            balance_step: true,
            tol_abs: T::lit(1e-8),
            tol_rel: T::lit(1e-6),
            max_outer_iters: 2000,
            inner: InnerOptions::default(),
        }
    }

    pub fn validate(&self, m: usize) -> Result<(), T> {
        if self.weights.len() != m || self.lambdas.len() != m {
            return Err(shape_err(format!(
                "config has {} weights and {} penalties for {m} tasks",
                self.weights.len(),
                self.lambdas.len()
            )));
        }
        if self.weights.iter().chain(&self.lambdas).any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(param_err("weights and penalties must be finite and nonnegative"));
        }
        if !self.weights.iter().any(|&w| w > T::zero()) {
            return Err(param_err("at least one weight must be positive"));
        }
        if !(self.admm_step > T::zero()) || !(self.tol_abs > T::zero()) || !(self.tol_rel > T::zero()) {
            return Err(param_err("ADMM step and tolerances must be positive"));
        }
        if self.max_outer_iters == 0 {
            return Err(param_err("max_outer_iters must be positive"));
        }
        self.inner.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverDiagnostics<T> {
    pub iterations: usize,
    pub primal_residual: T,
    pub dual_residual: T,
    pub primal_threshold: T,
    pub dual_threshold: T,
    pub converged: bool,
    /// Final ADMM penalty after residual balancing.
    pub admm_step: T,
    /// Last certified residual of each task's subproblem.
    pub inner_residuals: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionSolution<T> {
    /// Column `j` is the estimate for task `j`.
    pub theta_hat: Vec<Vec<T>>,
    pub beta_hat: Vec<T>,
    pub objective: T,
    /// `true` where the task's estimate coincides exactly with the center.
    pub pooled_mask: Vec<bool>,
    pub diagnostics: SolverDiagnostics<T>,
}

impl<T: Scalar> FusionSolution<T> {
    pub fn num_pooled(&self) -> usize {
        self.pooled_mask.iter().filter(|&&p| p).count()
    }
}

fn check_shapes<T: Scalar>(data: &MultiTaskDataset<T>, theta: &[Vec<T>], beta: &[T]) -> Result<(), T> {
    let (m, d) = (data.num_tasks(), data.dim());
    if theta.len() != m || beta.len() != d || theta.iter().any(|c| c.len() != d) {
        return Err(shape_err(format!("expected {m} columns of length {d} and a center of length {d}")));
    }
    Ok(())
}

/// `sum_j w_j [f_j(theta_j) + lambda_j |theta_j - beta|]`.
pub fn objective_value<T: Scalar>(
    data: &MultiTaskDataset<T>,
    spec: &LossSpec<T>,
    weights: &[T],
    lambdas: &[T],
    theta: &[Vec<T>],
    beta: &[T],
) -> Result<T, T> {
    check_shapes(data, theta, beta)?;
    let m = data.num_tasks();
    if weights.len() != m || lambdas.len() != m {
        return Err(shape_err(format!("need {m} weights and penalties")));
    }
    let model = ResidualModel::new(spec)?;
    objective_with(&model, data, weights, lambdas, theta, beta)
}

pub(crate) fn objective_with<T: Scalar>(
    model: &ResidualModel<T>,
    data: &MultiTaskDataset<T>,
    weights: &[T],
    lambdas: &[T],
    theta: &[Vec<T>],
    beta: &[T],
) -> Result<T, T> {
    let mut terms = Vec::with_capacity(data.num_tasks());
    for (j, task) in data.tasks().iter().enumerate() {
        let w = weights[j];
        if w == T::zero() {
            terms.push(T::zero());
            continue;
        }
        let mut v = risk_with(model, &theta[j], task)?;
        if lambdas[j] != T::zero() {
            v += lambdas[j] * dist2(&theta[j], beta);
        }
        terms.push(w * v);
    }
    Ok(pairwise_sum(&terms))
}

/// Block soft-threshold `(1 - kappa/|v|)_+ v`, the prox of `kappa |.|_2`.
pub fn prox_group_norm<T: Scalar>(v: &[T], kappa: T) -> Vec<T> {
    let n = norm2(v);
    if n <= kappa {
        return vec![T::zero(); v.len()];
    }
    let f = T::one() - kappa / n;
    v.iter().map(|&x| x * f).collect()
}

/// `argmin w_scale f(theta) + (strength/2) |theta - target|^2`, certified to
/// a subgradient residual of at most `inner_tol`.
pub fn theta_subproblem<T: Scalar>(
    task: &TaskDataset<T>,
    spec: &LossSpec<T>,
    target: &[T],
    strength: T,
    w_scale: T,
    inner_tol: T,
) -> Result<Vec<T>, T> {
    if !(strength > T::zero()) || !(w_scale > T::zero()) || !(inner_tol > T::zero()) {
        return Err(param_err("strength, weight and tolerance must be positive"));
    }
    if target.len() != task.dim() {
        return Err(shape_err(format!("target has length {}, task dimension is {}", target.len(), task.dim())));
    }
    let model = ResidualModel::new(spec)?;
    let design = Design::from_task(&model, task, w_scale)?;
    let mut alpha = vec![T::zero(); design.len()];
    let ctl = InnerOptions { tol: inner_tol, ..InnerOptions::default() }.control();
    let sol = design.prox_solve(&model.phi, strength, target, &mut alpha, ctl);
    if sol.converged {
        Ok(sol.theta)
    } else {
        Err(Error::NotConverged {
            context: "prox subproblem",
            iterations: ctl.max_iters,
            residual: sol.residual,
            best: BestIterate::Point(sol.theta),
        })
    }
}

pub(crate) fn stl_with<T: Scalar>(model: &ResidualModel<T>, task: &TaskDataset<T>, opts: &InnerOptions<T>) -> Result<Vec<T>, T> {
    let design = Design::from_task(model, task, T::one())?;
    finish(design.minimize(&model.phi, opts.control())?, opts, "single-task solve")
}

pub(crate) fn dp_with<T: Scalar>(
    model: &ResidualModel<T>,
    data: &MultiTaskDataset<T>,
    weights: &[T],
    opts: &InnerOptions<T>,
) -> Result<Vec<T>, T> {
    let total: T = weights.iter().copied().sum();
    let design = Design::from_tasks(
        model,
        data.tasks().iter().zip(weights).filter(|(_, &w)| w > T::zero()).map(|(t, &w)| (t, w / total)),
    )?;
    finish(design.minimize(&model.phi, opts.control())?, opts, "pooled solve")
}

fn finish<T: Scalar>(sol: inner::InnerSolution<T>, opts: &InnerOptions<T>, context: &'static str) -> Result<Vec<T>, T> {
    if sol.converged {
        Ok(sol.theta)
    } else {
        Err(Error::NotConverged { context, iterations: opts.max_iters, residual: sol.residual, best: BestIterate::Point(sol.theta) })
    }
}

/// Minimizer of the task's empirical risk.
pub fn solve_stl<T: Scalar>(task: &TaskDataset<T>, spec: &LossSpec<T>, opts: &InnerOptions<T>) -> Result<Vec<T>, T> {
    opts.validate()?;
    stl_with(&ResidualModel::new(spec)?, task, opts)
}

/// Minimizer of `sum_j omega_j f_j`; `omega_j` defaults to `n_j`, i.e. the
/// plain empirical risk of the merged sample.
pub fn solve_dp<T: Scalar>(
    data: &MultiTaskDataset<T>,
    spec: &LossSpec<T>,
    weights: Option<&[T]>,
    opts: &InnerOptions<T>,
) -> Result<Vec<T>, T> {
    opts.validate()?;
    let omega: Vec<T> = match weights {
        Some(w) => {
            if w.len() != data.num_tasks() {
                return Err(shape_err(format!("{} pooling weights for {} tasks", w.len(), data.num_tasks())));
            }
            if w.iter().any(|&v| !(v >= T::zero())) || !w.iter().any(|&v| v > T::zero()) {
                return Err(param_err("pooling weights must be nonnegative with a positive entry"));
            }
            w.to_vec()
        }
        None => data.sample_counts().into_iter().map(T::from_usize_lossy).collect(),
    };
    if data.total_samples() == 0 {
        return Err(input_err("no samples to pool"));
    }
    dp_with(&ResidualModel::new(spec)?, data, &omega, opts)
}
