//! Consensus ADMM on the splitting `z_j = theta_j - beta`.
//!
//! The `theta` block is updated task by task (in parallel). The `(z, beta)`
//! block is minimized jointly: eliminating `z` leaves a Huber-type location
//! problem for `beta`, solved by damped Newton, after which each `z_j` is a
//! block soft-threshold. This keeps the method a two-block ADMM.

use rayon::prelude::*;

use super::inner::{Design, InnerControl};
use super::{dp_with, objective_with, prox_group_norm, stl_with, FusionConfig, FusionSolution, SolverDiagnostics};
use crate::error::{BestIterate, Error, Result};
use crate::linalg;
use crate::losses::{LossSpec, MultiTaskDataset, ResidualModel};
use crate::scalar::{dist2, norm2, Scalar};

const RELAXATION: f64 = 1.6;
const BALANCE_EVERY: usize = 5;
const BALANCE_UNTIL: usize = 1000;
const MAX_CHANGES: usize = 30;

struct TaskState<T> {
    theta: Vec<T>,
    z: Vec<T>,
    u: Vec<T>,
    alpha: Vec<T>,
    inner_residual: T,
}

/// Solves `min_{Theta, beta} sum_j w_j [f_j(theta_j) + lambda_j |theta_j - beta|]`.
///
/// Tasks with `lambda_j = 0` decouple and are solved on their own; tasks
/// with `w_j = 0` do not enter the objective and are reported at the center.
/// When every coupled task ends up pooled, the center is re-solved as the
/// `w`-weighted pooled minimizer, which is then the exact joint optimum.
pub fn solve_fused<T: Scalar>(data: &MultiTaskDataset<T>, spec: &LossSpec<T>, config: &FusionConfig<T>) -> Result<FusionSolution<T>, T> {
    let m = data.num_tasks();
    let d = data.dim();
    config.validate(m)?;
    let model = ResidualModel::new(spec)?;
    let w = &config.weights;
    let lam = &config.lambdas;

    let coupled: Vec<usize> = (0..m).filter(|&j| w[j] > T::zero() && lam[j] > T::zero()).collect();
    let free: Vec<usize> = (0..m).filter(|&j| w[j] > T::zero() && lam[j] == T::zero()).collect();

    let mut theta = vec![vec![T::zero(); d]; m];
    for &j in &free {
        theta[j] = stl_with(&model, &data.tasks()[j], &config.inner)?;
    }

    let mut diag = SolverDiagnostics {
        iterations: 0,
        primal_residual: T::zero(),
        dual_residual: T::zero(),
        primal_threshold: T::zero(),
        dual_threshold: T::zero(),
        converged: true,
        admm_step: config.admm_step,
        inner_residuals: vec![T::zero(); m],
    };

    let mut pooled = vec![false; m];
    let beta = if coupled.is_empty() {
        weighted_mean(&theta, w, d)
    } else {
        let out = run_admm(&model, data, config, &coupled, &mut diag)?;
        for (k, &j) in coupled.iter().enumerate() {
            pooled[j] = out.pooled[k];
            theta[j] = out.theta[k].clone();
        }
        out.beta
    };
    for j in 0..m {
        if w[j] == T::zero() {
            theta[j] = beta.clone();
            pooled[j] = true;
        }
    }
    for &j in &free {
        pooled[j] = theta[j] == beta;
    }

    let objective = objective_with(&model, data, w, lam, &theta, &beta)?;
    let mut solution = FusionSolution { theta_hat: theta, beta_hat: beta, objective, pooled_mask: pooled, diagnostics: diag };

    if !coupled.is_empty() && coupled.iter().all(|&j| solution.pooled_mask[j]) {
        polish_pooled(&model, data, config, &coupled, &mut solution)?;
    }

    // Never report anything worse than the starting point.
    let zeros = vec![vec![T::zero(); d]; m];
    let origin = vec![T::zero(); d];
    let start = objective_with(&model, data, w, lam, &zeros, &origin)?;
    if start < solution.objective {
        solution.theta_hat = zeros;
        solution.beta_hat = origin;
        solution.objective = start;
        solution.pooled_mask = vec![true; m];
    }

    if solution.diagnostics.converged {
        Ok(solution)
    } else {
        Err(Error::NotConverged {
            context: "fused ADMM",
            iterations: solution.diagnostics.iterations,
            residual: solution.diagnostics.primal_residual.max(solution.diagnostics.dual_residual),
            best: BestIterate::Fused(Box::new(solution)),
        })
    }
}

fn weighted_mean<T: Scalar>(theta: &[Vec<T>], w: &[T], d: usize) -> Vec<T> {
    let total: T = w.iter().copied().sum();
    (0..d)
        .map(|k| {
            let mut acc = T::zero();
            for (col, &wj) in theta.iter().zip(w) {
                if wj > T::zero() {
                    acc += wj * col[k];
                }
            }
            acc / total
        })
        .collect()
}

fn polish_pooled<T: Scalar>(
    model: &ResidualModel<T>,
    data: &MultiTaskDataset<T>,
    config: &FusionConfig<T>,
    coupled: &[usize],
    solution: &mut FusionSolution<T>,
) -> Result<(), T> {
    let mut wc = vec![T::zero(); data.num_tasks()];
    for &j in coupled {
        wc[j] = config.weights[j];
    }
    let Ok(center) = dp_with(model, data, &wc, &config.inner) else {
        return Ok(());
    };
    let mut theta = solution.theta_hat.clone();
    for (j, col) in theta.iter_mut().enumerate() {
        if coupled.contains(&j) || config.weights[j] == T::zero() {
            *col = center.clone();
        }
    }
    let value = objective_with(model, data, &config.weights, &config.lambdas, &theta, &center)?;
    if value <= solution.objective {
        for &j in coupled {
            solution.pooled_mask[j] = true;
        }
        let free_pooled: Vec<bool> =
            (0..data.num_tasks()).map(|j| config.weights[j] == T::zero() || theta[j] == center).collect();
        for (j, p) in free_pooled.into_iter().enumerate() {
            solution.pooled_mask[j] = solution.pooled_mask[j] || p;
        }
        solution.theta_hat = theta;
        solution.beta_hat = center;
        solution.objective = value;
        solution.diagnostics.converged = true;
    }
    Ok(())
}

struct AdmmOutput<T> {
    theta: Vec<Vec<T>>,
    beta: Vec<T>,
    pooled: Vec<bool>,
}

fn run_admm<T: Scalar>(
    model: &ResidualModel<T>,
    data: &MultiTaskDataset<T>,
    config: &FusionConfig<T>,
    coupled: &[usize],
    diag: &mut SolverDiagnostics<T>,
) -> Result<AdmmOutput<T>, T> {
    let d = data.dim();
    let mc = coupled.len();
    let designs: Vec<Design<T>> = coupled
        .iter()
        .map(|&j| Design::from_task(model, &data.tasks()[j], config.weights[j]))
        .collect::<Result<_, T>>()?;
    let penalty: Vec<T> = coupled.iter().map(|&j| config.weights[j] * config.lambdas[j]).collect();
    // Start from the single-task fits and their slopes, centered by one
    // consensus step.
    let mut states: Vec<TaskState<T>> = designs
        .par_iter()
        .map(|des| {
            let (theta, alpha) = des.warm_start(&model.phi);
            TaskState { theta, z: vec![T::zero(); d], u: vec![T::zero(); d], alpha, inner_residual: T::zero() }
        })
        .collect();
    let mut sigma = config.admm_step;
    let v0: Vec<Vec<T>> = states.iter().map(|st| st.theta.clone()).collect();
    let kappa0: Vec<T> = penalty.iter().map(|&p| p / sigma).collect();
    let mut beta = consensus_center(&v0, &kappa0, &weighted_mean(&v0, &vec![T::one(); mc], d));
    for (k, st) in states.iter_mut().enumerate() {
        let diff: Vec<T> = (0..d).map(|i| v0[k][i] - beta[i]).collect();
        st.z = prox_group_norm(&diff, kappa0[k]);
    }
    let root = T::from_usize_lossy(d * mc).sqrt();
    let (lo_sigma, hi_sigma) = (T::lit(1e-4), T::lit(1e4));
    let mut last = (T::infinity(), T::infinity());
    let mut changes = 0usize;

    for iter in 1..=config.max_outer_iters {
        // Subproblem accuracy tightens with the outer residuals.
        let gap = last.0.min(last.1 / sigma);
        let tol = config.inner.tol.max((T::lit(1e-2) * sigma * gap).min(T::lit(1e-3)));
        let ctl = InnerControl { tol, max_iters: config.inner.max_iters };
        let b = &beta;
        states.par_iter_mut().zip(designs.par_iter()).for_each(|(st, des)| {
            let q: Vec<T> = (0..d).map(|k| b[k] + st.z[k] - st.u[k]).collect();
            let sol = des.prox_solve(&model.phi, sigma, &q, &mut st.alpha, ctl);
            st.theta = sol.theta;
            st.inner_residual = sol.residual;
        });

        // Over-relaxed consensus step.
        let relax = T::lit(RELAXATION);
        let hat: Vec<Vec<T>> = states
            .iter()
            .map(|st| (0..d).map(|k| relax * st.theta[k] + (T::one() - relax) * (beta[k] + st.z[k])).collect())
            .collect();
        let v: Vec<Vec<T>> = states.iter().zip(&hat).map(|(st, h)| (0..d).map(|k| h[k] + st.u[k]).collect()).collect();
        let kappa: Vec<T> = penalty.iter().map(|&p| p / sigma).collect();
        let new_beta = consensus_center(&v, &kappa, &beta);
        let mut primal = T::zero();
        let mut dual = T::zero();
        let (mut theta_norm, mut bz_norm, mut u_norm) = (T::zero(), T::zero(), T::zero());
        for (k, st) in states.iter_mut().enumerate() {
            let diff: Vec<T> = (0..d).map(|i| v[k][i] - new_beta[i]).collect();
            let z = prox_group_norm(&diff, kappa[k]);
            for i in 0..d {
                let dz = (new_beta[i] - beta[i]) + (z[i] - st.z[i]);
                dual += dz * dz;
                let r = st.theta[i] - new_beta[i] - z[i];
                primal += r * r;
                st.u[i] += hat[k][i] - new_beta[i] - z[i];
                theta_norm += st.theta[i] * st.theta[i];
                let bz = new_beta[i] + z[i];
                bz_norm += bz * bz;
                u_norm += st.u[i] * st.u[i];
            }
            st.z = z;
        }
        beta = new_beta;
        let primal = primal.sqrt();
        let dual = sigma * dual.sqrt();
        let eps_pri = root * config.tol_abs + config.tol_rel * theta_norm.sqrt().max(bz_norm.sqrt());
        let eps_dual = root * config.tol_abs + config.tol_rel * sigma * u_norm.sqrt();
        diag.iterations = iter;
        diag.primal_residual = primal;
        diag.dual_residual = dual;
        diag.primal_threshold = eps_pri;
        diag.dual_threshold = eps_dual;
        diag.admm_step = sigma;
        last = (primal, dual);

        let inner_cap = config.inner.tol.max(T::lit(0.1) * sigma * eps_pri.min(eps_dual / sigma));
        let inner_ok = states.iter().all(|st| st.inner_residual <= inner_cap);
        if primal <= eps_pri && dual <= eps_dual && inner_ok {
            diag.converged = true;
            break;
        }
        diag.converged = false;

        // Step changes are spaced out and eventually frozen: ADMM with a
        // step that keeps moving need not converge.
        if config.balance_step && iter % BALANCE_EVERY == 0 && iter <= BALANCE_UNTIL && changes < MAX_CHANGES {
            // Balance the residuals relative to their thresholds.
            let ratio = (primal / eps_pri) / (dual / eps_dual);
            let five = T::lit(5.0);
            let scale = if ratio > five || ratio < five.recip() {
                let f = ratio.sqrt().max(T::lit(0.1)).min(T::lit(10.0));
                let next = (sigma * f).max(lo_sigma).min(hi_sigma);
                (next != sigma).then(|| next / sigma)
            } else {
                None
            };
            if let Some(f) = scale {
                changes += 1;
                sigma *= f;
                for st in states.iter_mut() {
                    for ui in st.u.iter_mut() {
                        *ui /= f;
                    }
                }
            }
        }
    }

    for (k, &j) in coupled.iter().enumerate() {
        diag.inner_residuals[j] = states[k].inner_residual;
    }
    let pooled: Vec<bool> = states.iter().map(|st| st.z.iter().all(|&x| x == T::zero())).collect();
    let theta = states.iter().zip(&pooled).map(|(st, &p)| if p { beta.clone() } else { st.theta.clone() }).collect();
    Ok(AdmmOutput { theta, beta, pooled })
}

/// `argmin_beta sum_j H_{kappa_j}(v_j - beta)` with the Huber function
/// `H_k(x) = |x|^2/2` for `|x| <= k`, `k|x| - k^2/2` otherwise; i.e. the
/// root of `sum_j P_{B(kappa_j)}(v_j - beta)`.
pub(crate) fn consensus_center<T: Scalar>(v: &[Vec<T>], kappa: &[T], start: &[T]) -> Vec<T> {
    let d = start.len();
    let m = v.len();
    let huber = |beta: &[T]| -> T {
        let mut acc = T::zero();
        for (vj, &k) in v.iter().zip(kappa) {
            let r = dist2(vj, beta);
            acc += if r <= k { r * r / T::lit(2.0) } else { k * r - k * k / T::lit(2.0) };
        }
        acc
    };
    let force = |beta: &[T]| -> Vec<T> {
        let mut g = vec![T::zero(); d];
        for (vj, &k) in v.iter().zip(kappa) {
            let diff: Vec<T> = (0..d).map(|i| vj[i] - beta[i]).collect();
            let r = norm2(&diff);
            let f = if r <= k { T::one() } else { k / r };
            for i in 0..d {
                g[i] += f * diff[i];
            }
        }
        g
    };
    let scale: T = kappa.iter().copied().sum::<T>() + T::epsilon();
    let tol = T::lit(4.0) * T::epsilon() * scale * T::from_usize_lossy(m);
    let mut beta = start.to_vec();
    let mut value = huber(&beta);
    for _ in 0..200 {
        let g = force(&beta);
        let gn = norm2(&g);
        if gn <= tol {
            break;
        }
        let mut h = vec![T::zero(); d * d];
        for (vj, &k) in v.iter().zip(kappa) {
            let diff: Vec<T> = (0..d).map(|i| vj[i] - beta[i]).collect();
            let r = norm2(&diff);
            if r <= k {
                for i in 0..d {
                    h[i * d + i] += T::one();
                }
            } else {
                let f = k / r;
                for i in 0..d {
                    h[i * d + i] += f;
                    for l in 0..d {
                        h[i * d + l] -= f * diff[i] * diff[l] / (r * r);
                    }
                }
            }
        }
        for i in 0..d {
            h[i * d + i] += T::lit(1e-12) * T::from_usize_lossy(m);
        }
        let step = linalg::solve(&h, &g, T::lit(1e-15)).unwrap_or_else(|| g.iter().map(|&x| x / T::from_usize_lossy(m)).collect());
        // Armijo backtracking on the Huber objective.
        let slope = -crate::scalar::dot(&g, &step);
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<T> = (0..d).map(|i| beta[i] + t * step[i]).collect();
            let tv = huber(&trial);
            // Near the optimum the value change drowns in rounding; a full
            // step that halves the force is still progress.
            let halves = t == T::one() && norm2(&force(&trial)) <= gn / T::lit(2.0);
            if tv <= value + T::lit(1e-4) * t * slope || tv < value || halves {
                beta = trial;
                value = tv;
                accepted = true;
                break;
            }
            t /= T::lit(2.0);
        }
        if !accepted {
            break;
        }
    }
    beta
}
