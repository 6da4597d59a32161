//! Independent ground truth: exact 1-d quantiles, exhaustive grids, a slow
//! subgradient reference for the fused problem, and checkers for the
//! deterministic personalization bound.

use rayon::prelude::*;

use crate::error::{input_err, param_err, shape_err, Error, Result};
use crate::linalg;
use crate::losses::{LossSpec, MultiTaskDataset, ResidualModel, TaskDataset};
use crate::piecewise::PiecewiseQuadratic;
use crate::scalar::{dist2, norm2, Scalar};
use crate::solver::{objective_value, optimality_residual, FusionConfig, FusionSolution};

/// Largest grid [`brute_force_minimize`] evaluates by default.
pub const DEFAULT_CELL_BUDGET: u128 = 10_000_000;

/// Regularity constants of a strongly convex, smooth risk.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularityParams<T> {
    pub rho: T,
    pub lip: T,
    pub radius: T,
    pub kappa: T,
    /// Per-task approximation gaps.
    pub zeta: Vec<T>,
    pub zeta_s: T,
    pub sigma: T,
}

impl<T: Scalar> RegularityParams<T> {
    pub fn new(rho: T, lip: T, radius: T, zeta: Vec<T>, zeta_s: T, sigma: T) -> Result<Self, T> {
        if !(rho > T::zero()) || !(lip >= rho) || !(radius > T::zero()) {
            return Err(param_err(format!("need 0 < rho <= L and radius > 0 (rho={rho}, L={lip}, M={radius})")));
        }
        if zeta.iter().any(|&z| !(z >= T::zero())) || !(zeta_s >= T::zero()) {
            return Err(param_err("approximation gaps must be nonnegative"));
        }
        let total: T = zeta.iter().copied().sum();
        if zeta_s > total * (T::one() + T::lit(1e-12)) {
            return Err(param_err("aggregate gap cannot exceed the sum of per-task gaps"));
        }
        Ok(Self { rho, lip, radius, kappa: lip / rho, zeta, zeta_s, sigma })
    }

    /// Exact-risk regularity (`zeta = 0`) for `m` tasks.
    pub fn exact(rho: T, lip: T, m: usize) -> Result<Self, T> {
        Self::new(rho, lip, T::one(), vec![T::zero(); m], T::zero(), T::zero())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution<T> {
    pub theta: Vec<Vec<T>>,
    pub beta: Vec<T>,
    pub objective: T,
    /// Certificate residual times the radius of the region the method
    /// explored; a bound on the gap whenever an optimum lies in that region.
    pub certified_gap: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersonalizationReport<T> {
    pub holds: bool,
    pub distance: Vec<T>,
    pub bound: Vec<T>,
    /// `bound - distance` per task.
    pub slack: Vec<T>,
}

fn sort_values<T: Scalar>(v: &mut [T]) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
}

/// Full argmin interval of `q -> sum_i rho_tau(D_i - q)`.
///
/// Strictly between the `k`-th and `(k+1)`-th order statistics the slope is
/// `k - n tau`; the interval is where it changes sign.
pub fn exact_quantile_location<T: Scalar>(samples: &[T], tau: T) -> Result<(T, T), T> {
    if samples.is_empty() {
        return Err(input_err("no samples"));
    }
    if !(tau > T::zero() && tau < T::one()) {
        return Err(param_err(format!("quantile level must lie in (0, 1), got {tau}")));
    }
    let mut x = samples.to_vec();
    sort_values(&mut x);
    let n = x.len();
    let nt = T::from_usize_lossy(n) * tau;
    let tie = T::lit(4.0) * T::epsilon() * T::from_usize_lossy(n);
    for k in 1..n {
        let slope = T::from_usize_lossy(k) - nt;
        if slope.abs() <= tie {
            return Ok((x[k - 1], x[k]));
        }
        if slope > T::zero() {
            return Ok((x[k - 1], x[k - 1]));
        }
    }
    Ok((x[n - 1], x[n - 1]))
}

/// Exhaustive search over the grid `lo + i * step` (clipped to `hi`) in up
/// to three variables. Returns the first minimizer in lexicographic order
/// (first coordinate slowest) and its value.
pub fn brute_force_minimize<T, F>(objective: F, lo: &[T], hi: &[T], step: T, budget: u128) -> Result<(Vec<T>, T), T>
where
    T: Scalar,
    F: Fn(&[T]) -> T + Sync,
{
    let k = lo.len();
    if k == 0 || k > 3 || hi.len() != k {
        return Err(shape_err("brute force needs 1 to 3 variables with matching bounds"));
    }
    if !(step > T::zero()) || lo.iter().zip(hi).any(|(&a, &b)| !(a.is_finite() && b.is_finite() && a <= b)) {
        return Err(param_err("brute force needs a finite box and a positive step"));
    }
    let counts: Vec<u128> = lo
        .iter()
        .zip(hi)
        .map(|(&a, &b)| ((b - a) / step + T::lit(1e-9)).floor().to_u128().unwrap_or(u128::MAX / 4) + 1)
        .collect();
    let cells = counts.iter().fold(1u128, |acc, &c| acc.saturating_mul(c));
    if cells > budget {
        return Err(Error::Budget { cells, budget });
    }
    let coord = |axis: usize, i: u128| -> T { (lo[axis] + step * T::from_u128(i).unwrap_or_else(T::zero)).min(hi[axis]) };
    let inner: u128 = counts[1..].iter().product();
    let rows: Vec<(u128, Vec<T>, T)> = (0..counts[0])
        .into_par_iter()
        .map(|i0| {
            let mut best: Option<(Vec<T>, T)> = None;
            let mut p = vec![T::zero(); k];
            p[0] = coord(0, i0);
            for flat in 0..inner {
                let mut rem = flat;
                for axis in (1..k).rev() {
                    p[axis] = coord(axis, rem % counts[axis]);
                    rem /= counts[axis];
                }
                let v = objective(&p);
                if best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((p.clone(), v));
                }
            }
            let (pt, v) = best.expect("nonempty grid row");
            (i0, pt, v)
        })
        .collect();
    let mut best: Option<(Vec<T>, T)> = None;
    for (_, pt, v) in rows {
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((pt, v));
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// Joint subgradient of the fused objective at `(Theta, beta)`.
fn fused_subgradient<T: Scalar>(
    model: &ResidualModel<T>,
    data: &MultiTaskDataset<T>,
    config: &FusionConfig<T>,
    theta: &[Vec<T>],
    beta: &[T],
) -> Result<(Vec<Vec<T>>, Vec<T>), T> {
    let d = data.dim();
    let mut gb = vec![T::zero(); d];
    let mut gt = Vec::with_capacity(theta.len());
    for (j, task) in data.tasks().iter().enumerate() {
        let w = config.weights[j];
        let mut g = crate::losses::subgradient_with(model, &theta[j], task)?;
        for v in g.iter_mut() {
            *v *= w;
        }
        let gap = dist2(&theta[j], beta);
        let p = w * config.lambdas[j];
        if p > T::zero() && gap > T::zero() {
            for k in 0..d {
                let s = p * (theta[j][k] - beta[k]) / gap;
                g[k] += s;
                gb[k] -= s;
            }
        }
        gt.push(g);
    }
    Ok((gt, gb))
}

/// Slow cross-check for [`crate::solve_fused`]: restarted subgradient descent
/// on the joint variable with steps `c / sqrt(k)` inside each epoch, halving
/// `c` and restarting from the best point between epochs, and evaluating
/// the epoch's running average as well. `budget` counts objective
/// evaluations; with `budget = 1` the initial point is returned.
pub fn reference_solve_fused<T: Scalar>(
    data: &MultiTaskDataset<T>,
    spec: &LossSpec<T>,
    config: &FusionConfig<T>,
    budget: usize,
) -> Result<ReferenceSolution<T>, T> {
    if budget == 0 {
        return Err(param_err("budget must be at least 1"));
    }
    config.validate(data.num_tasks())?;
    let model = ResidualModel::new(spec)?;
    let (m, d) = (data.num_tasks(), data.dim());
    const EPOCH: usize = 1000;

    let scale = data
        .tasks()
        .iter()
        .flat_map(|t| t.samples().iter().map(|s| s.response.abs()))
        .fold(T::one(), T::max);
    let eval = |th: &[Vec<T>], b: &[T]| objective_value(data, spec, &config.weights, &config.lambdas, th, b);

    let mut x = vec![vec![T::zero(); d]; m];
    let mut b = vec![T::zero(); d];
    let mut best = (eval(&x, &b)?, x.clone(), b.clone());
    let mut used = 1usize;
    let mut c = scale;
    let mut travelled = T::zero();
    'epochs: while used < budget {
        x = best.1.clone();
        b = best.2.clone();
        let mut avg_x = vec![vec![T::zero(); d]; m];
        let mut avg_b = vec![T::zero(); d];
        for k in 1..=EPOCH {
            let (gt, gb) = fused_subgradient(&model, data, config, &x, &b)?;
            let gn = (gt.iter().map(|g| crate::scalar::dot(g, g)).sum::<T>() + crate::scalar::dot(&gb, &gb)).sqrt();
            if gn == T::zero() {
                break 'epochs;
            }
            let h = c / (T::from_usize_lossy(k).sqrt() * gn);
            for (xj, gj) in x.iter_mut().zip(&gt) {
                for (v, &g) in xj.iter_mut().zip(gj) {
                    *v -= h * g;
                }
            }
            for (v, &g) in b.iter_mut().zip(&gb) {
                *v -= h * g;
            }
            travelled += h * gn;
            let kk = T::from_usize_lossy(k);
            for (aj, xj) in avg_x.iter_mut().zip(&x) {
                for (a, &v) in aj.iter_mut().zip(xj) {
                    *a += (v - *a) / kk;
                }
            }
            for (a, &v) in avg_b.iter_mut().zip(&b) {
                *a += (v - *a) / kk;
            }
            let f = eval(&x, &b)?;
            used += 1;
            if f < best.0 {
                best = (f, x.clone(), b.clone());
            }
            if used >= budget {
                break 'epochs;
            }
        }
        let f = eval(&avg_x, &avg_b)?;
        used += 1;
        if f < best.0 {
            best = (f, avg_x, avg_b);
        }
        c /= T::lit(2.0);
    }
    let (objective, theta, beta) = best;
    let residual = optimality_residual(data, spec, config, &theta, &beta)?;
    let radius = travelled + norm2(&beta) + theta.iter().map(|t| norm2(t)).sum::<T>();
    Ok(ReferenceSolution { theta, beta, objective, certified_gap: residual * radius })
}

/// Extreme eigenvalues `(rho, L)` of the task's average Gram matrix
/// `X'X / n`, i.e. the curvature bounds of its quadratic risk.
pub fn gram_eigen_bounds<T: Scalar>(task: &TaskDataset<T>) -> (T, T) {
    let d = task.dim();
    let mut g = vec![T::zero(); d * d];
    for s in task.samples() {
        for r in 0..d {
            for k in 0..d {
                g[r * d + k] += s.covariates[r] * s.covariates[k];
            }
        }
    }
    let n = T::from_usize_lossy(task.len());
    for v in g.iter_mut() {
        *v /= n;
    }
    let ev = linalg::symmetric_eigenvalues(&g, d);
    (ev[0], ev[d - 1])
}

/// Checks `|theta_hat_j - theta_tilde_j| <= (lambda_j + zeta_j) / rho + tol`
/// for every task, where `theta_tilde` are the single-task solutions.
pub fn check_personalization_bound<T: Scalar>(
    fused: &FusionSolution<T>,
    stl: &[Vec<T>],
    lambdas: &[T],
    params: &RegularityParams<T>,
    tol: T,
) -> Result<PersonalizationReport<T>, T> {
    let m = fused.theta_hat.len();
    if stl.len() != m || lambdas.len() != m || params.zeta.len() != m {
        return Err(shape_err(format!("expected {m} single-task solutions, penalties and gaps")));
    }
    if !(params.rho > T::zero()) {
        return Err(param_err("rho must be positive"));
    }
    let mut report = PersonalizationReport { holds: true, distance: vec![], bound: vec![], slack: vec![] };
    for j in 0..m {
        if stl[j].len() != fused.theta_hat[j].len() {
            return Err(shape_err(format!("column {j} has mismatched length")));
        }
        let dist = dist2(&fused.theta_hat[j], &stl[j]);
        let bound = (lambdas[j] + params.zeta[j]) / params.rho;
        report.holds &= dist <= bound + tol;
        report.distance.push(dist);
        report.bound.push(bound);
        report.slack.push(bound - dist);
    }
    Ok(report)
}

/// `inf_y f(y) + lambda |x - y|` for a convex 1-d `f`, by a uniform grid
/// followed by golden-section refinement around the best grid point.
pub fn infimal_convolution_1d<T: Scalar>(f: &PiecewiseQuadratic<T>, lambda: T, x: T) -> T {
    let g = |y: T| f.value(y) + lambda * (x - y).abs();
    let points = 20_000usize;
    let mut width = T::lit(2.0) * (T::one() + x.abs());
    for _ in 0..40 {
        let h = (width + width) / T::from_usize_lossy(points);
        let at = |i: usize| x - width + h * T::from_usize_lossy(i);
        let mut best = (0usize, g(at(0)));
        for i in 1..=points {
            let v = g(at(i));
            if v < best.1 {
                best = (i, v);
            }
        }
        if best.0 == 0 || best.0 == points {
            width *= T::lit(4.0);
            continue;
        }
        // The grid minimum brackets the minimizer of the convex `g`.
        let (mut a, mut b) = (at(best.0 - 1), at(best.0 + 1));
        let ratio = T::lit(0.618_033_988_749_894_9);
        let mut c1 = b - ratio * (b - a);
        let mut c2 = a + ratio * (b - a);
        let (mut g1, mut g2) = (g(c1), g(c2));
        for _ in 0..200 {
            if g1 <= g2 {
                b = c2;
                c2 = c1;
                g2 = g1;
                c1 = b - ratio * (b - a);
                g1 = g(c1);
            } else {
                a = c1;
                c1 = c2;
                g1 = g2;
                c2 = a + ratio * (b - a);
                g2 = g(c2);
            }
        }
        return best.1.min(g1).min(g2).min(g(x));
    }
    g(x)
}
