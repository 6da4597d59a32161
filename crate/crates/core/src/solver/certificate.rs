//! Optimality certificates for the fused objective and the pooling threshold.

use super::inner::{Design, KinkTerm};
use super::{check_shapes, dp_with, FusionConfig, InnerOptions};
use crate::error::{param_err, shape_err, Result};
use crate::losses::{LossSpec, MultiTaskDataset, ResidualModel};
use crate::scalar::{dist2, dot, norm2, Scalar};

/// Relative distance under which a column counts as sitting at the center,
/// and residuals count as sitting on a kink.
const ACTIVE_TOL: f64 = 1e-9;

struct TaskBlock<T> {
    fixed: Vec<T>,
    kinks: Vec<KinkTerm<T>>,
    /// `w_j lambda_j` when the column sits at the center, else zero.
    ball: T,
}

/// Smallest norm of an element of the subdifferential of the fused
/// objective at `(Theta, beta)`, over the `theta_j` and `beta` blocks.
///
/// The value is attained by an explicit selection, so it is an upper bound
/// on the exact minimal norm; kinks and pooled columns are detected with a
/// relative tolerance of `1e-9`.
pub fn optimality_residual<T: Scalar>(
    data: &MultiTaskDataset<T>,
    spec: &LossSpec<T>,
    config: &FusionConfig<T>,
    theta: &[Vec<T>],
    beta: &[T],
) -> Result<T, T> {
    check_shapes(data, theta, beta)?;
    config.validate(data.num_tasks())?;
    let model = ResidualModel::new(spec)?;
    let d = data.dim();
    let mut blocks = Vec::with_capacity(data.num_tasks());
    let mut beta_fixed = vec![T::zero(); d];
    let beta_scale = T::one() + norm2(beta);
    for (j, task) in data.tasks().iter().enumerate() {
        let (w, lam) = (config.weights[j], config.lambdas[j]);
        let design = Design::from_task(&model, task, w)?;
        let slack = T::lit(ACTIVE_TOL) * (T::one() + norm2(&theta[j]));
        let (mut fixed, kinks) = design.linearize(&model.phi, &theta[j], slack);
        let p = w * lam;
        let gap = dist2(&theta[j], beta);
        let mut ball = T::zero();
        if p > T::zero() {
            if gap <= T::lit(ACTIVE_TOL) * beta_scale {
                ball = p;
            } else {
                for k in 0..d {
                    let s = p * (theta[j][k] - beta[k]) / gap;
                    fixed[k] += s;
                    beta_fixed[k] -= s;
                }
            }
        }
        blocks.push(TaskBlock { fixed, kinks, ball });
    }
    Ok(min_norm_selection(&blocks, &beta_fixed, d))
}

/// Projected accelerated gradient on `|R(x)|^2 / 2` over the kink boxes and
/// unit balls; returns the smallest `|R|` seen.
fn min_norm_selection<T: Scalar>(blocks: &[TaskBlock<T>], beta_fixed: &[T], d: usize) -> T {
    let nk: Vec<usize> = blocks.iter().map(|b| b.kinks.len()).collect();
    // Variable layout per task: kink slopes, then d ball coordinates.
    let offsets: Vec<usize> = blocks
        .iter()
        .scan(0usize, |acc, b| {
            let o = *acc;
            *acc += b.kinks.len() + if b.ball > T::zero() { d } else { 0 };
            Some(o)
        })
        .collect();
    let nvar = offsets.last().map_or(0, |&o| o + nk[nk.len() - 1] + if blocks[blocks.len() - 1].ball > T::zero() { d } else { 0 });

    let apply = |x: &[T], affine: bool| -> (Vec<Vec<T>>, Vec<T>) {
        let mut rb: Vec<T> = if affine { beta_fixed.to_vec() } else { vec![T::zero(); d] };
        let rj = blocks
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let mut r: Vec<T> = if affine { b.fixed.clone() } else { vec![T::zero(); d] };
                let o = offsets[j];
                for (i, kt) in b.kinks.iter().enumerate() {
                    for k in 0..d {
                        r[k] -= x[o + i] * kt.row[k];
                    }
                }
                if b.ball > T::zero() {
                    let so = o + b.kinks.len();
                    for k in 0..d {
                        r[k] += b.ball * x[so + k];
                        rb[k] -= b.ball * x[so + k];
                    }
                }
                r
            })
            .collect();
        (rj, rb)
    };
    let adjoint = |rj: &[Vec<T>], rb: &[T]| -> Vec<T> {
        let mut g = vec![T::zero(); nvar];
        for (j, b) in blocks.iter().enumerate() {
            let o = offsets[j];
            for (i, kt) in b.kinks.iter().enumerate() {
                g[o + i] = -dot(&kt.row, &rj[j]);
            }
            if b.ball > T::zero() {
                let so = o + b.kinks.len();
                for k in 0..d {
                    g[so + k] = b.ball * (rj[j][k] - rb[k]);
                }
            }
        }
        g
    };
    let norm_of = |rj: &[Vec<T>], rb: &[T]| -> T {
        let mut acc = dot(rb, rb);
        for r in rj {
            acc += dot(r, r);
        }
        acc.sqrt()
    };
    let project = |x: &mut [T]| {
        for (j, b) in blocks.iter().enumerate() {
            let o = offsets[j];
            for (i, kt) in b.kinks.iter().enumerate() {
                x[o + i] = x[o + i].max(kt.lo).min(kt.hi);
            }
            if b.ball > T::zero() {
                let so = o + b.kinks.len();
                let n = norm2(&x[so..so + d]);
                if n > T::one() {
                    for v in &mut x[so..so + d] {
                        *v /= n;
                    }
                }
            }
        }
    };

    let mut x = vec![T::zero(); nvar];
    project(&mut x);
    let (rj, rb) = apply(&x, true);
    let mut best = norm_of(&rj, &rb);
    if nvar == 0 || best == T::zero() {
        return best;
    }

    // Operator norm estimate by power iteration, padded for safety.
    let mut p: Vec<T> = (0..nvar).map(|i| T::one() + T::lit(0.1) * T::from_usize_lossy(i % 7)).collect();
    let mut lip = T::zero();
    for _ in 0..50 {
        let n = norm2(&p);
        if n == T::zero() {
            break;
        }
        for v in p.iter_mut() {
            *v /= n;
        }
        let (rj, rb) = apply(&p, false);
        p = adjoint(&rj, &rb);
        lip = norm2(&p);
    }
    if lip == T::zero() {
        return best;
    }
    let step = (T::lit(1.5) * lip).recip();

    let mut y = x.clone();
    let mut t = T::one();
    for _ in 0..20_000 {
        let (rj, rb) = apply(&y, true);
        let g = adjoint(&rj, &rb);
        let mut xn: Vec<T> = y.iter().zip(&g).map(|(&yi, &gi)| yi - step * gi).collect();
        project(&mut xn);
        let (rj, rb) = apply(&xn, true);
        let val = norm_of(&rj, &rb);
        let improved = val < best;
        if improved {
            best = val;
        }
        let tn = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
        let mom = if improved { (t - T::one()) / tn } else { T::zero() };
        y = xn.iter().zip(&x).map(|(&a, &b)| a + mom * (a - b)).collect();
        x = xn;
        t = if improved { tn } else { T::one() };
        if best <= T::epsilon() * T::lit(16.0) {
            break;
        }
    }
    best
}

/// A penalty level at and above which every task is pooled at the optimum.
///
/// With `bar_theta` the `w`-weighted pooled minimizer and `B_j` a bound on
/// the norm of every element of the subdifferential of `f_j` at `bar_theta`,
/// returns `(2 / min_j w_j) max_j w_j B_j`, inflated by 1%.
pub fn pooling_threshold<T: Scalar>(
    data: &MultiTaskDataset<T>,
    spec: &LossSpec<T>,
    weights: &[T],
    opts: &InnerOptions<T>,
) -> Result<T, T> {
    if weights.len() != data.num_tasks() {
        return Err(shape_err(format!("{} weights for {} tasks", weights.len(), data.num_tasks())));
    }
    if weights.iter().any(|&w| !(w >= T::zero())) || !weights.iter().any(|&w| w > T::zero()) {
        return Err(param_err("weights must be nonnegative with a positive entry"));
    }
    let model = ResidualModel::new(spec)?;
    let center = dp_with(&model, data, weights, opts)?;
    let slack = T::lit(1e-7) * (T::one() + norm2(&center));
    let mut worst = T::zero();
    let mut min_w = T::infinity();
    for (task, &w) in data.tasks().iter().zip(weights) {
        if w == T::zero() {
            continue;
        }
        min_w = min_w.min(w);
        let design = Design::from_task(&model, task, T::one())?;
        let (fixed, kinks) = design.linearize(&model.phi, &center, slack);
        let mut bound = norm2(&fixed);
        for kt in &kinks {
            bound += kt.lo.abs().max(kt.hi.abs()) * norm2(&kt.row);
        }
        worst = worst.max(w * bound);
    }
    Ok(T::lit(2.0) * worst / min_w * T::lit(1.01) + T::epsilon().sqrt())
}
