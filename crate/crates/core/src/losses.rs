//! Multi-task datasets and the per-sample loss family.
//!
//! All losses share the form `phi(t - a'theta) + mu * |theta|^2` where `phi`
//! is a convex piecewise-quadratic function of the residual:
//!
//! | loss                    | `a`     | `t` | `phi(r)`                  |
//! |-------------------------|---------|-----|---------------------------|
//! | check (quantile) `tau`  | `x`     | `y` | `tau r+ + (1-tau) r-`     |
//! | newsvendor `b, h`       | `x`     | `y` | `b r+ + h r-`             |
//! | generalized newsvendor  | `x`     | `y` | `B(r+) + H(r-)`           |
//! | hinge + ridge `mu`      | `y x`   | `1` | `r+`                      |
//! | quadratic               | `x`     | `y` | `r^2 / 2`                 |
//!
//! Subgradient selection is fixed: at a kink whose subdifferential contains
//! zero the residual term contributes zero (check/newsvendor at residual 0,
//! hinge at margin exactly 1).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, param_err, shape_err, Result};
use crate::piecewise::{two_sided, HalfLineCost, PiecewiseQuadratic};
use crate::scalar::{dot, pairwise_sum, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoint<T> {
    pub covariates: Vec<T>,
    pub response: T,
}

impl<T: Scalar> SamplePoint<T> {
    pub fn new(covariates: Vec<T>, response: T) -> Self {
        Self { covariates, response }
    }

    pub fn dim(&self) -> usize {
        self.covariates.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset<T> {
    task_id: String,
    samples: Vec<SamplePoint<T>>,
}

impl<T: Scalar> TaskDataset<T> {
    pub fn new(task_id: impl Into<String>, samples: Vec<SamplePoint<T>>) -> Result<Self, T> {
        let task_id = task_id.into();
        let Some(first) = samples.first() else {
            return Err(input_err(format!("task {task_id:?} has no samples")));
        };
        let d = first.dim();
        if let Some(i) = samples.iter().position(|s| s.dim() != d) {
            return Err(shape_err(format!(
                "task {task_id:?}: sample {i} has {} covariates, expected {d}",
                samples[i].dim()
            )));
        }
        Ok(Self { task_id, samples })
    }

    /// Single-covariate (location) task `x = [1]` with the given responses.
    pub fn location(task_id: impl Into<String>, responses: &[T]) -> Result<Self, T> {
        Self::new(task_id, responses.iter().map(|&y| SamplePoint::new(vec![T::one()], y)).collect())
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn samples(&self) -> &[SamplePoint<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    /// Sub-task made of the given sample indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, T> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::new(self.task_id.clone(), samples)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskDataset<T> {
    tasks: Vec<TaskDataset<T>>,
    dim: usize,
}

impl<T: Scalar> MultiTaskDataset<T> {
    pub fn new(tasks: Vec<TaskDataset<T>>) -> Result<Self, T> {
        let Some(first) = tasks.first() else {
            return Err(input_err("dataset needs at least one task"));
        };
        let dim = first.dim();
        let mut seen = HashSet::new();
        for t in &tasks {
            if t.dim() != dim {
                return Err(shape_err(format!("task {:?} has dimension {}, expected {dim}", t.task_id, t.dim())));
            }
            if !seen.insert(t.task_id.as_str()) {
                return Err(input_err(format!("duplicate task id {:?}", t.task_id)));
            }
        }
        Ok(Self { tasks, dim })
    }

    pub fn tasks(&self) -> &[TaskDataset<T>] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.tasks.iter().map(TaskDataset::len).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.tasks.iter().map(TaskDataset::len).sum()
    }
}

/// Tagged description of the per-sample loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec<T> {
    Check { tau: T },
    Newsvendor { backorder: T, holding: T },
    GeneralizedNewsvendor { backorder: HalfLineCost<T>, holding: HalfLineCost<T> },
    HingeRidge { mu: T },
    Quadratic,
}

impl<T: Scalar> LossSpec<T> {
    pub fn check(tau: T) -> Result<Self, T> {
        let spec = Self::Check { tau };
        spec.validate()?;
        Ok(spec)
    }

    pub fn newsvendor(backorder: T, holding: T) -> Result<Self, T> {
        let spec = Self::Newsvendor { backorder, holding };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), T> {
        match self {
            Self::Check { tau } => check_tau(*tau),
            Self::Newsvendor { backorder, holding } => {
                if *backorder > T::zero() && *holding > T::zero() {
                    Ok(())
                } else {
                    Err(param_err(format!("newsvendor costs must be positive (b={backorder}, h={holding})")))
                }
            }
            Self::GeneralizedNewsvendor { .. } => self.residual_penalty().map(|_| ()),
            Self::HingeRidge { mu } => {
                if *mu >= T::zero() {
                    Ok(())
                } else {
                    Err(param_err(format!("ridge weight must be nonnegative, got {mu}")))
                }
            }
            Self::Quadratic => Ok(()),
        }
    }

    /// The residual penalty `phi`.
    pub fn residual_penalty(&self) -> Result<PiecewiseQuadratic<T>, T> {
        match self {
            Self::Check { tau } => {
                check_tau(*tau)?;
                two_sided(&HalfLineCost::linear(*tau), &HalfLineCost::linear(T::one() - *tau))
            }
            Self::Newsvendor { backorder, holding } => {
                self.validate()?;
                two_sided(&HalfLineCost::linear(*backorder), &HalfLineCost::linear(*holding))
            }
            Self::GeneralizedNewsvendor { backorder, holding } => two_sided(backorder, holding),
            Self::HingeRidge { .. } => two_sided(&HalfLineCost::linear(T::one()), &HalfLineCost::linear(T::zero())),
            Self::Quadratic => {
                let half = HalfLineCost { breaks: Vec::new(), coeffs: vec![vec![T::zero(), T::zero(), T::lit(0.5)]] };
                two_sided(&half, &half)
            }
        }
    }

    /// Coefficient `mu` of the `mu |theta|^2` term (nonzero only for hinge-ridge).
    pub fn ridge(&self) -> T {
        match self {
            Self::HingeRidge { mu } => *mu,
            _ => T::zero(),
        }
    }

    pub fn is_margin_loss(&self) -> bool {
        matches!(self, Self::HingeRidge { .. })
    }

    /// Whether every sample term is piecewise linear in `theta`.
    pub fn is_piecewise_linear(&self) -> bool {
        match self {
            Self::Check { .. } | Self::Newsvendor { .. } => true,
            Self::HingeRidge { mu } => *mu == T::zero(),
            Self::Quadratic => false,
            Self::GeneralizedNewsvendor { .. } => self.residual_penalty().map(|p| p.is_piecewise_linear()).unwrap_or(false),
        }
    }
}

fn check_tau<T: Scalar>(tau: T) -> Result<(), T> {
    if tau > T::zero() && tau < T::one() {
        Ok(())
    } else {
        Err(param_err(format!("quantile level must lie in (0, 1), got {tau}")))
    }
}

/// `rho_tau(z) = (1 - tau) z- + tau z+`.
pub fn check_loss<T: Scalar>(z: T, tau: T) -> Result<T, T> {
    check_tau(tau)?;
    Ok(if z >= T::zero() { tau * z } else { (tau - T::one()) * z })
}

/// Critical ratio `b / (b + h)`.
pub fn tau_from_costs<T: Scalar>(backorder: T, holding: T) -> Result<T, T> {
    if backorder < T::zero() || holding < T::zero() || !(backorder + holding > T::zero()) {
        return Err(param_err(format!("costs must be nonnegative with positive sum (b={backorder}, h={holding})")));
    }
    Ok(backorder / (backorder + holding))
}

/// Evaluation-ready form of a loss: `phi`, ridge weight and the sample map.
#[derive(Clone, Debug)]
pub(crate) struct ResidualModel<T> {
    pub phi: PiecewiseQuadratic<T>,
    pub ridge: T,
    pub margin: bool,
}

impl<T: Scalar> ResidualModel<T> {
    pub fn new(spec: &LossSpec<T>) -> Result<Self, T> {
        spec.validate()?;
        Ok(Self { phi: spec.residual_penalty()?, ridge: spec.ridge(), margin: spec.is_margin_loss() })
    }

    /// `(t, sign)` with `a = sign * x`.
    #[inline]
    pub fn target(&self, s: &SamplePoint<T>) -> Result<(T, T), T> {
        if self.margin {
            if s.response != T::one() && s.response != -T::one() {
                return Err(input_err(format!("hinge labels must be +1 or -1, got {}", s.response)));
            }
            Ok((T::one(), s.response))
        } else {
            Ok((s.response, T::one()))
        }
    }

    #[inline]
    pub fn residual(&self, theta: &[T], s: &SamplePoint<T>) -> Result<T, T> {
        let (t, sign) = self.target(s)?;
        Ok(t - sign * dot(&s.covariates, theta))
    }

    pub fn value(&self, theta: &[T], s: &SamplePoint<T>) -> Result<T, T> {
        let r = self.residual(theta, s)?;
        Ok(self.phi.value(r) + self.ridge_value(theta))
    }

    fn ridge_value(&self, theta: &[T]) -> T {
        if self.ridge == T::zero() {
            T::zero()
        } else {
            self.ridge * dot(theta, theta)
        }
    }

    /// Adds `scale * l(theta, xi)` into `out`.
    pub fn add_subgradient(&self, theta: &[T], s: &SamplePoint<T>, scale: T, out: &mut [T]) -> Result<(), T> {
        let (t, sign) = self.target(s)?;
        let r = t - sign * dot(&s.covariates, theta);
        let g = self.phi.select_subgradient(r);
        let coef = -scale * g * sign;
        if coef != T::zero() {
            for (o, &x) in out.iter_mut().zip(&s.covariates) {
                *o += coef * x;
            }
        }
        if self.ridge != T::zero() {
            let two = T::lit(2.0) * self.ridge * scale;
            for (o, &th) in out.iter_mut().zip(theta) {
                *o += two * th;
            }
        }
        Ok(())
    }
}

fn check_dim<T: Scalar>(theta: &[T], d: usize) -> Result<(), T> {
    if theta.len() == d {
        Ok(())
    } else {
        Err(shape_err(format!("parameter has length {}, covariates have {d}", theta.len())))
    }
}

pub fn loss_value<T: Scalar>(spec: &LossSpec<T>, theta: &[T], sample: &SamplePoint<T>) -> Result<T, T> {
    check_dim(theta, sample.dim())?;
    ResidualModel::new(spec)?.value(theta, sample)
}

/// The selected element of the subdifferential of `theta -> loss(theta, sample)`.
pub fn loss_subgradient<T: Scalar>(spec: &LossSpec<T>, theta: &[T], sample: &SamplePoint<T>) -> Result<Vec<T>, T> {
    check_dim(theta, sample.dim())?;
    let mut out = vec![T::zero(); theta.len()];
    ResidualModel::new(spec)?.add_subgradient(theta, sample, T::one(), &mut out)?;
    Ok(out)
}

/// Mean loss over the task's samples, summed pairwise in sample order.
pub fn empirical_risk<T: Scalar>(spec: &LossSpec<T>, theta: &[T], task: &TaskDataset<T>) -> Result<T, T> {
    let model = ResidualModel::new(spec)?;
    risk_with(&model, theta, task)
}

pub(crate) fn risk_with<T: Scalar>(model: &ResidualModel<T>, theta: &[T], task: &TaskDataset<T>) -> Result<T, T> {
    if task.is_empty() {
        return Err(input_err("empirical risk of an empty task"));
    }
    check_dim(theta, task.dim())?;
    let mut phis = Vec::with_capacity(task.len());
    for s in task.samples() {
        phis.push(model.phi.value(model.residual(theta, s)?));
    }
    Ok(pairwise_sum(&phis) / T::from_usize_lossy(task.len()) + model.ridge_value(theta))
}

pub fn empirical_subgradient<T: Scalar>(spec: &LossSpec<T>, theta: &[T], task: &TaskDataset<T>) -> Result<Vec<T>, T> {
    let model = ResidualModel::new(spec)?;
    subgradient_with(&model, theta, task)
}

pub(crate) fn subgradient_with<T: Scalar>(model: &ResidualModel<T>, theta: &[T], task: &TaskDataset<T>) -> Result<Vec<T>, T> {
    if task.is_empty() {
        return Err(input_err("empirical subgradient of an empty task"));
    }
    check_dim(theta, task.dim())?;
    let d = theta.len();
    let n = task.len();
    // Coordinate-wise pairwise sums keep the result independent of blocking.
    let mut per_sample = vec![T::zero(); n * d];
    for (i, s) in task.samples().iter().enumerate() {
        model.add_subgradient(theta, s, T::one(), &mut per_sample[i * d..(i + 1) * d])?;
    }
    let inv_n = T::from_usize_lossy(n).recip();
    let mut column = vec![T::zero(); n];
    Ok((0..d)
        .map(|k| {
            for i in 0..n {
                column[i] = per_sample[i * d + k];
            }
            pairwise_sum(&column) * inv_n
        })
        .collect())
}
