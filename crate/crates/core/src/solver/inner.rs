//! Single-parameter subproblems: `min_theta L(theta) + (s/2)|theta - q|^2`
//! where `L(theta) = sum_i c_i phi(t_i - a_i'theta) + rho |theta|^2`.
//!
//! Three exact or near-exact paths are used: a linear solve when `phi` is a
//! single quadratic, a breakpoint scan when `d = 1`, and dual coordinate
//! ascent otherwise. With `s = 0` the general path is wrapped in a proximal
//! point loop.

use crate::error::{input_err, Result};
use crate::linalg;
use crate::losses::{ResidualModel, TaskDataset};
use crate::piecewise::PiecewiseQuadratic;
use crate::scalar::{dot, norm2, pairwise_sum, Scalar};

/// Flattened weighted samples of one or more tasks.
#[derive(Clone, Debug)]
pub(crate) struct Design<T> {
    pub d: usize,
    a: Vec<T>,
    t: Vec<T>,
    c: Vec<T>,
    sq: Vec<T>,
    /// `rho` of the ridge term, already multiplied by the total sample weight.
    pub ridge: T,
}

#[derive(Clone, Debug)]
pub(crate) struct KinkTerm<T> {
    pub row: Vec<T>,
    pub lo: T,
    pub hi: T,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct InnerControl<T> {
    pub tol: T,
    pub max_iters: usize,
}

/// Result of an inner solve: the point and a certified residual.
#[derive(Clone, Debug)]
pub(crate) struct InnerSolution<T> {
    pub theta: Vec<T>,
    pub residual: T,
    pub converged: bool,
}

impl<T: Scalar> Design<T> {
    /// Samples of `task`, each weighted `weight / n`.
    pub fn from_task(model: &ResidualModel<T>, task: &TaskDataset<T>, weight: T) -> Result<Self, T> {
        Self::from_tasks(model, std::iter::once((task, weight)))
    }

    /// Union of tasks, samples of task `j` weighted `weight_j / n_j`.
    pub fn from_tasks<'a>(
        model: &ResidualModel<T>,
        tasks: impl IntoIterator<Item = (&'a TaskDataset<T>, T)>,
    ) -> Result<Self, T> {
        let mut out = Self { d: 0, a: Vec::new(), t: Vec::new(), c: Vec::new(), sq: Vec::new(), ridge: T::zero() };
        let mut total = T::zero();
        for (task, weight) in tasks {
            if task.is_empty() {
                return Err(input_err(format!("task {:?} has no samples", task.task_id())));
            }
            out.d = task.dim();
            let ci = weight / T::from_usize_lossy(task.len());
            total += weight;
            for s in task.samples() {
                let (t, sign) = model.target(s)?;
                let start = out.a.len();
                out.a.extend(s.covariates.iter().map(|&x| sign * x));
                out.sq.push(dot(&out.a[start..], &out.a[start..]));
                out.t.push(t);
                out.c.push(ci);
            }
        }
        out.ridge = model.ridge * total;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    #[inline]
    fn row(&self, i: usize) -> &[T] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    /// `L(theta)`.
    pub fn value(&self, phi: &PiecewiseQuadratic<T>, theta: &[T]) -> T {
        let terms: Vec<T> = (0..self.len()).map(|i| self.c[i] * phi.value(self.t[i] - dot(self.row(i), theta))).collect();
        pairwise_sum(&terms) + self.ridge * dot(theta, theta)
    }

    /// Residual of `L + (s/2)|. - q|^2` at `theta`, minimized over kink
    /// selections sample by sample (a valid upper bound on the min-norm
    /// subgradient). `alpha` proposes selections at kinks; `slack` widens
    /// kink detection to absorb the solver's own accuracy.
    pub fn residual(&self, phi: &PiecewiseQuadratic<T>, theta: &[T], s: T, q: &[T], alpha: Option<&[T]>, slack: T) -> T {
        let mut g: Vec<T> = (0..self.d).map(|k| T::lit(2.0) * self.ridge * theta[k] + s * (theta[k] - q[k])).collect();
        for i in 0..self.len() {
            let row = self.row(i);
            let r = self.t[i] - dot(row, theta);
            let (lo, hi) = self.slope_range(phi, i, r, slack);
            let pick = match alpha {
                Some(al) => al[i].max(lo).min(hi),
                None => {
                    if lo <= T::zero() && T::zero() <= hi {
                        T::zero()
                    } else if hi < T::zero() {
                        hi
                    } else {
                        lo
                    }
                }
            };
            let coef = self.c[i] * pick;
            for k in 0..self.d {
                g[k] -= coef * row[k];
            }
        }
        norm2(&g)
    }

    /// Splits `dL(theta)` into the part fixed by smooth samples and the ridge,
    /// and the samples sitting on kinks; those contribute `-slope * row` with
    /// `slope` free in `[lo, hi]`.
    pub fn linearize(&self, phi: &PiecewiseQuadratic<T>, theta: &[T], slack: T) -> (Vec<T>, Vec<KinkTerm<T>>) {
        let mut fixed: Vec<T> = theta.iter().map(|&v| T::lit(2.0) * self.ridge * v).collect();
        let mut kinks = Vec::new();
        for i in 0..self.len() {
            let row = self.row(i);
            let r = self.t[i] - dot(row, theta);
            let (lo, hi) = self.slope_range(phi, i, r, slack);
            if lo < hi {
                kinks.push(KinkTerm { row: row.iter().map(|&x| self.c[i] * x).collect(), lo, hi });
            } else {
                for (f, &x) in fixed.iter_mut().zip(row) {
                    *f -= self.c[i] * lo * x;
                }
            }
        }
        (fixed, kinks)
    }

    /// Slopes of `phi` admissible at residual `r`, treating breakpoints within
    /// the slack as active.
    fn slope_range(&self, phi: &PiecewiseQuadratic<T>, i: usize, r: T, slack: T) -> (T, T) {
        let tol = slack * self.sq[i].sqrt() + T::lit(8.0) * T::epsilon() * (T::one() + self.t[i].abs() + r.abs());
        let breaks = phi.breaks();
        let k = breaks.partition_point(|&b| b < r - tol);
        if k < breaks.len() && (breaks[k] - r).abs() <= tol {
            phi.subdifferential(breaks[k])
        } else {
            phi.subdifferential(r)
        }
    }

    /// Minimizer of `L + (s/2)|. - q|^2` when `phi` is one quadratic.
    pub fn solve_quadratic(&self, phi: &PiecewiseQuadratic<T>, s: T, q: &[T]) -> Option<Vec<T>> {
        let p = phi.pieces()[0];
        let d = self.d;
        let two_a = p.curvature();
        let mut h = vec![T::zero(); d * d];
        let mut rhs: Vec<T> = q.iter().map(|&v| s * v).collect();
        for i in 0..self.len() {
            let row = self.row(i);
            let ci = self.c[i];
            for r in 0..d {
                let f = ci * two_a * row[r];
                for k in 0..d {
                    h[r * d + k] += f * row[k];
                }
                rhs[r] += ci * row[r] * (two_a * self.t[i] + p.b);
            }
        }
        for r in 0..d {
            h[r * d + r] += T::lit(2.0) * self.ridge + s;
        }
        linalg::solve(&h, &rhs, T::lit(1e-13))
    }

    /// One-sided derivatives of `L + (s/2)(. - q)^2` at `theta` for `d = 1`.
    fn derivatives_1d(&self, phi: &PiecewiseQuadratic<T>, theta: T, s: T, q: T) -> (T, T) {
        let base = T::lit(2.0) * self.ridge * theta + s * (theta - q);
        let mut left = Vec::with_capacity(self.len());
        let mut right = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let a = self.a[i];
            if a == T::zero() {
                continue;
            }
            let r = self.t[i] - a * theta;
            let (sl, sr) = phi.subdifferential(r);
            // Moving theta right moves r left when a > 0.
            let (dr, dl) = if a > T::zero() { (sl, sr) } else { (sr, sl) };
            right.push(-self.c[i] * a * dr);
            left.push(-self.c[i] * a * dl);
        }
        (pairwise_sum(&left) + base, pairwise_sum(&right) + base)
    }

    /// Exact min-norm subgradient for `d = 1`: distance of 0 from the
    /// interval between the one-sided derivatives.
    fn residual_1d(&self, phi: &PiecewiseQuadratic<T>, theta: T, s: T, q: T) -> T {
        let (left, right) = self.derivatives_1d(phi, theta, s, q);
        if left > T::zero() {
            left
        } else if right < T::zero() {
            -right
        } else {
            T::zero()
        }
    }

    /// Exact minimizer of `L + (s/2)(. - q)^2` for `d = 1`, by scanning the
    /// sorted breakpoints. Errors when the objective is unbounded below.
    pub fn solve_1d(&self, phi: &PiecewiseQuadratic<T>, s: T, q: T) -> Result<T, T> {
        let mut pts: Vec<T> = Vec::with_capacity(self.len() * phi.breaks().len());
        for i in 0..self.len() {
            let a = self.a[i];
            if a != T::zero() {
                pts.extend(phi.breaks().iter().map(|&b| (self.t[i] - b) / a));
            }
        }
        pts.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        pts.dedup();
        let (mut lo, mut hi) = (0usize, pts.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.derivatives_1d(phi, pts[mid], s, q).1 >= T::zero() {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo < pts.len() && self.derivatives_1d(phi, pts[lo], s, q).0 <= T::zero() {
            return Ok(pts[lo]);
        }
        // The minimizer lies strictly inside a smooth stretch.
        let left = if lo > 0 { Some(pts[lo - 1]) } else { None };
        let right = pts.get(lo).copied();
        let probe = match (left, right) {
            (Some(l), Some(r)) => l + (r - l) / T::lit(2.0),
            (Some(l), None) => l + T::one(),
            (None, Some(r)) => r - T::one(),
            (None, None) => q,
        };
        let slope = self.derivatives_1d(phi, probe, s, q).1;
        let mut curv = T::lit(2.0) * self.ridge + s;
        for i in 0..self.len() {
            let a = self.a[i];
            if a != T::zero() {
                let k = phi.piece_index(self.t[i] - a * probe);
                curv += self.c[i] * a * a * phi.pieces()[k].curvature();
            }
        }
        if curv > T::zero() {
            let mut x = probe - slope / curv;
            if let Some(l) = left {
                x = x.max(l);
            }
            if let Some(r) = right {
                x = x.min(r);
            }
            Ok(x)
        } else if slope == T::zero() {
            Ok(probe)
        } else {
            Err(input_err("objective is unbounded below; no minimizer exists"))
        }
    }

    /// `theta = q + (1/s) sum_i c_i alpha_i a_i`.
    fn primal_from_dual(&self, alpha: &[T], s: T, q: &[T]) -> Vec<T> {
        let mut theta = q.to_vec();
        for i in 0..self.len() {
            let f = self.c[i] * alpha[i] / s;
            if f != T::zero() {
                for (th, &x) in theta.iter_mut().zip(self.row(i)) {
                    *th += f * x;
                }
            }
        }
        theta
    }

    /// Dual coordinate ascent for `L + (s/2)|. - q|^2`, `s > 0`. `alpha` is
    /// the warm start and is updated in place. Stops when a full pass moves
    /// `theta` by at most `step_tol` in every coordinate update.
    pub fn sdca(&self, phi: &PiecewiseQuadratic<T>, s: T, q: &[T], alpha: &mut [T], step_tol: T, max_passes: usize) -> (Vec<T>, bool) {
        let sp = s + T::lit(2.0) * self.ridge;
        let qp: Vec<T> = q.iter().map(|&v| s * v / sp).collect();
        let mut theta = self.primal_from_dual(alpha, sp, &qp);
        for pass in 0..max_passes {
            let mut moved = T::zero();
            for i in 0..self.len() {
                if self.sq[i] == T::zero() {
                    continue;
                }
                let row = &self.a[i * self.d..(i + 1) * self.d];
                let gamma = self.c[i] * self.sq[i] / sp;
                if gamma == T::zero() {
                    continue;
                }
                let rbar = self.t[i] - dot(row, &theta) + gamma * alpha[i];
                let r = phi.prox(rbar, gamma).x;
                let na = (rbar - r) / gamma;
                let delta = na - alpha[i];
                if delta != T::zero() {
                    alpha[i] = na;
                    let f = self.c[i] * delta / sp;
                    for (th, &x) in theta.iter_mut().zip(row) {
                        *th += f * x;
                    }
                    moved = moved.max((f * self.sq[i].sqrt()).abs());
                }
            }
            if pass % 16 == 15 {
                theta = self.primal_from_dual(alpha, sp, &qp);
            }
            if moved <= step_tol {
                return (self.primal_from_dual(alpha, sp, &qp), true);
            }
        }
        (self.primal_from_dual(alpha, sp, &qp), false)
    }

    /// Prox subproblem `argmin L + (s/2)|. - q|^2` for `s > 0` to residual `tol`.
    pub fn prox_solve(&self, phi: &PiecewiseQuadratic<T>, s: T, q: &[T], alpha: &mut [T], ctl: InnerControl<T>) -> InnerSolution<T> {
        if phi.breaks().is_empty() {
            if let Some(theta) = self.solve_quadratic(phi, s, q) {
                let residual = self.residual(phi, &theta, s, q, None, T::zero());
                return InnerSolution { theta, residual, converged: true };
            }
        }
        if self.d == 1 {
            if let Ok(x) = self.solve_1d(phi, s, q[0]) {
                let residual = self.residual_1d(phi, x, s, q[0]);
                return InnerSolution { theta: vec![x], residual, converged: true };
            }
        }
        let sp = s + T::lit(2.0) * self.ridge;
        let mut step_tol = ctl.tol / sp.max(T::one()) / T::lit(8.0);
        let mut spent = 0usize;
        loop {
            let budget = ctl.max_iters.saturating_sub(spent).max(1);
            let (theta, _) = self.sdca(phi, s, q, alpha, step_tol, budget.min(256));
            spent += budget.min(256);
            let slack = step_tol * T::from_usize_lossy(self.len());
            let residual = self.residual(phi, &theta, s, q, Some(alpha), slack);
            if residual <= ctl.tol {
                return InnerSolution { theta, residual, converged: true };
            }
            if spent >= ctl.max_iters {
                return InnerSolution { theta, residual, converged: false };
            }
            step_tol = (step_tol / T::lit(16.0)).max(T::epsilon() * T::epsilon());
        }
    }

    /// Unregularized minimizer of `L` (`s = 0`) to residual `tol`.
    pub fn minimize(&self, phi: &PiecewiseQuadratic<T>, ctl: InnerControl<T>) -> Result<InnerSolution<T>, T> {
        let zero = vec![T::zero(); self.d];
        if phi.breaks().is_empty() {
            if let Some(theta) = self.solve_quadratic(phi, T::zero(), &zero) {
                let residual = self.residual(phi, &theta, T::zero(), &zero, None, T::zero());
                return Ok(InnerSolution { theta, residual, converged: true });
            }
        }
        if self.d == 1 {
            let x = self.solve_1d(phi, T::zero(), T::zero())?;
            let residual = self.residual_1d(phi, x, T::zero(), T::zero());
            return Ok(InnerSolution { theta: vec![x], residual, converged: true });
        }
        if phi.is_piecewise_linear() && self.ridge == T::zero() {
            if let Some((sol, _)) = self.solve_lp(phi)? {
                if sol.residual <= ctl.tol {
                    return Ok(sol);
                }
            }
        }
        self.proximal_point(phi, ctl)
    }

    /// A cheap approximate minimizer of `L` with matching per-sample slopes,
    /// used to warm-start dual coordinate ascent.
    pub fn warm_start(&self, phi: &PiecewiseQuadratic<T>) -> (Vec<T>, Vec<T>) {
        if phi.is_piecewise_linear() && self.ridge == T::zero() && !phi.breaks().is_empty() {
            if let Ok(Some((sol, dual))) = self.solve_lp(phi) {
                return (sol.theta, dual);
            }
        }
        let ctl = InnerControl { tol: T::lit(1e-6), max_iters: 50 };
        let theta = match self.minimize(phi, ctl) {
            Ok(sol) => sol.theta,
            Err(_) => vec![T::zero(); self.d],
        };
        let alpha = (0..self.len()).map(|i| phi.select_subgradient(self.t[i] - dot(self.row(i), &theta))).collect();
        (theta, alpha)
    }

    /// Piecewise-linear `L` through its dual linear program
    ///
    /// ```text
    /// max sum_i c_i sum_k (t_i - b_k) u_ik
    /// s.t. sum_i c_i a_i (g_0 + sum_k u_ik) = 0,  0 <= u_ik <= g_k - g_{k-1}
    /// ```
    ///
    /// where `g_k` are the slopes and `b_k` the breakpoints of `phi`. The
    /// dual slope of sample `i` is `g_0 + sum_k u_ik`; samples whose slope is
    /// strictly inside a kink interval sit on that breakpoint, which pins
    /// `theta` down by a `d x d` solve. `None` when that identification fails.
    fn solve_lp(&self, phi: &PiecewiseQuadratic<T>) -> Result<Option<(InnerSolution<T>, Vec<T>)>, T> {
        use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
        let (n, d) = (self.len(), self.d);
        let cmax = self.c.iter().fold(T::zero(), |acc, &c| acc.max(c));
        if !(cmax > T::zero()) {
            return Ok(None);
        }
        let slopes: Vec<f64> = phi.pieces().iter().map(|p| p.b.as_f64()).collect();
        let breaks = phi.breaks();
        let c: Vec<f64> = self.c.iter().map(|&c| (c / cmax).as_f64()).collect();
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let mut vars = Vec::with_capacity(n * breaks.len());
        for i in 0..n {
            for (k, &b) in breaks.iter().enumerate() {
                let width = slopes[k + 1] - slopes[k];
                vars.push(lp.add_var(c[i] * (self.t[i] - b).as_f64(), (0.0, width)));
            }
        }
        for r in 0..d {
            let mut expr = LinearExpr::empty();
            let mut rhs = 0.0;
            for i in 0..n {
                let x = c[i] * self.row(i)[r].as_f64();
                rhs -= slopes[0] * x;
                for k in 0..breaks.len() {
                    expr.add(vars[i * breaks.len() + k], x);
                }
            }
            lp.add_constraint(expr, ComparisonOp::Eq, rhs);
        }
        let sol = match lp.solve() {
            Ok(sol) => sol,
            Err(microlp::Error::Infeasible) => return Err(input_err("objective is unbounded below; no minimizer exists")),
            Err(_) => return Ok(None),
        };
        let mut interior = Vec::new();
        let mut dual = vec![T::lit(slopes[0]); n];
        for i in 0..n {
            for (k, &b) in breaks.iter().enumerate() {
                let width = slopes[k + 1] - slopes[k];
                let u = *sol.var_value(vars[i * breaks.len() + k]);
                dual[i] += T::lit(u);
                let gap = u.min(width - u);
                if gap > 1e-9 * width {
                    interior.push((gap, i, b));
                }
            }
        }
        interior.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
        let rows: Vec<(usize, T)> = interior.into_iter().map(|(_, i, b)| (i, b)).collect();
        // The LP duals are the kink slopes whenever `theta` is optimal.
        let certify = |theta: &[T]| self.kink_residual(phi, theta).min(self.residual(phi, theta, T::zero(), theta, Some(&dual), T::zero()));
        let mut best = self.vertex(&rows).map(|theta| (certify(&theta), theta));
        // Degenerate designs leave too few interior rows to pin `theta` down.
        let scale = T::lit(slopes.iter().fold(0.0, |acc: f64, g| acc.max(g.abs()))) * self.c.iter().zip(&self.sq).map(|(&c, &q)| c * q.sqrt()).sum::<T>();
        if best.as_ref().is_none_or(|(r, _)| *r > T::lit(1e-10) * scale) {
            if let Some(theta) = self.primal_lp(phi, &c) {
                let r = certify(&theta);
                if best.as_ref().is_none_or(|(rb, _)| r < *rb) {
                    best = Some((r, theta));
                }
            }
        }
        Ok(best.map(|(residual, theta)| (InnerSolution { theta, residual, converged: true }, dual)))
    }

    /// `min sum_i c_i e_i` over `e_i >= g_k (t_i - a_i' theta) + h_k` for
    /// every affine piece `g_k r + h_k` of `phi`.
    fn primal_lp(&self, phi: &PiecewiseQuadratic<T>, c: &[f64]) -> Option<Vec<T>> {
        use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
        let free = (f64::NEG_INFINITY, f64::INFINITY);
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let theta: Vec<_> = (0..self.d).map(|_| lp.add_var(0.0, free)).collect();
        for (i, &ci) in c.iter().enumerate() {
            let e = lp.add_var(ci, free);
            for p in phi.pieces() {
                let (g, h) = (p.b.as_f64(), p.c.as_f64());
                let mut expr = LinearExpr::empty();
                expr.add(e, 1.0);
                for (&v, &x) in theta.iter().zip(self.row(i)) {
                    expr.add(v, g * x.as_f64());
                }
                lp.add_constraint(expr, ComparisonOp::Ge, g * self.t[i].as_f64() + h);
            }
        }
        let sol = lp.solve().ok()?;
        Some(theta.iter().map(|&v| T::lit(*sol.var_value(v))).collect())
    }

    /// Solves `a_i' theta = t_i - b` on the first `d` linearly independent
    /// candidate rows. With fewer independent rows (a rank-deficient design)
    /// it returns the minimum-norm solution of those equations.
    fn vertex(&self, candidates: &[(usize, T)]) -> Option<Vec<T>> {
        let d = self.d;
        let mut basis: Vec<Vec<T>> = Vec::with_capacity(d);
        let mut a = Vec::with_capacity(d * d);
        let mut rhs = Vec::with_capacity(d);
        for &(i, b) in candidates {
            if basis.len() == d {
                break;
            }
            let row = self.row(i);
            let mut v = row.to_vec();
            for e in &basis {
                let p = dot(&v, e);
                for (vk, &ek) in v.iter_mut().zip(e) {
                    *vk -= p * ek;
                }
            }
            let nv = norm2(&v);
            if nv > T::lit(1e-8) * norm2(row) {
                basis.push(v.into_iter().map(|x| x / nv).collect());
                a.extend_from_slice(row);
                rhs.push(self.t[i] - b);
            }
        }
        let r = basis.len();
        if r == d {
            return linalg::solve(&a, &rhs, T::lit(1e-12));
        }
        let mut gram = vec![T::zero(); r * r];
        for p in 0..r {
            for q in 0..r {
                gram[p * r + q] = dot(&a[p * d..(p + 1) * d], &a[q * d..(q + 1) * d]);
            }
        }
        let y = linalg::solve(&gram, &rhs, T::lit(1e-12))?;
        Some((0..d).map(|k| (0..r).map(|p| y[p] * a[p * d + k]).sum()).collect())
    }

    /// Residual of `L` at `theta` with the kink slopes chosen by least
    /// squares and clipped to their intervals.
    fn kink_residual(&self, phi: &PiecewiseQuadratic<T>, theta: &[T]) -> T {
        let fallback = self.residual(phi, theta, T::zero(), theta, None, T::zero());
        let (fixed, kinks) = self.linearize(phi, theta, T::lit(1e-12));
        let k = kinks.len();
        if k == 0 {
            return norm2(&fixed);
        }
        // sum_i s_i row_i = fixed in the least-squares sense.
        let mut gram = vec![T::zero(); k * k];
        let mut rhs = vec![T::zero(); k];
        for p in 0..k {
            rhs[p] = dot(&kinks[p].row, &fixed);
            for q in 0..k {
                gram[p * k + q] = dot(&kinks[p].row, &kinks[q].row);
            }
        }
        let Some(slopes) = linalg::solve(&gram, &rhs, T::lit(1e-12)) else {
            return fallback;
        };
        let mut g = fixed;
        for (term, &sl) in kinks.iter().zip(&slopes) {
            let sl = sl.max(term.lo).min(term.hi);
            for (gk, &x) in g.iter_mut().zip(&term.row) {
                *gk -= sl * x;
            }
        }
        norm2(&g).min(fallback)
    }

    fn proximal_point(&self, phi: &PiecewiseQuadratic<T>, ctl: InnerControl<T>) -> Result<InnerSolution<T>, T> {
        let weight: T = self.c.iter().zip(&self.sq).map(|(&c, &q)| c * q).sum();
        let s0 = (weight / T::from_usize_lossy(self.d)).max(T::epsilon());
        let s_min = s0 * T::lit(1e-3);
        let mut s = s0;
        let mut alpha = vec![T::zero(); self.len()];
        let mut theta = vec![T::zero(); self.d];
        let mut best = (self.value(phi, &theta), theta.clone(), T::infinity());
        for _ in 0..ctl.max_iters {
            let inner = InnerControl { tol: ctl.tol / T::lit(4.0), max_iters: ctl.max_iters.max(1000) * 4 };
            let next = self.prox_solve(phi, s, &theta, &mut alpha, inner);
            let step = s * crate::scalar::dist2(&next.theta, &theta);
            theta = next.theta;
            let value = self.value(phi, &theta);
            // `s (theta_k - theta_{k+1})` is a subgradient of `L` at the new point.
            let residual = self.residual(phi, &theta, T::zero(), &theta, Some(&alpha), T::zero()).min(step + next.residual);
            if value <= best.0 {
                best = (value, theta.clone(), residual);
            }
            if residual <= ctl.tol {
                return Ok(InnerSolution { theta, residual, converged: true });
            }
            s = (s / T::lit(2.0)).max(s_min);
        }
        let residual = best.2;
        Ok(InnerSolution { theta: best.1, residual, converged: false })
    }
}
