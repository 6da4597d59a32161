//! Convex piecewise-quadratic scalar functions.
//!
//! Every per-sample loss in this crate is `phi(t - a'theta)` for a convex
//! piecewise-quadratic `phi`, so value, one-sided derivatives and the scalar
//! proximal map of `phi` are all that the solvers need.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::scalar::Scalar;

/// `a*x^2 + b*x + c`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadratic<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Scalar> Quadratic<T> {
    pub fn new(a: T, b: T, c: T) -> Self {
        Self { a, b, c }
    }

    #[inline]
    pub fn value(&self, x: T) -> T {
        (self.a * x + self.b) * x + self.c
    }

    #[inline]
    pub fn slope(&self, x: T) -> T {
        (self.a + self.a) * x + self.b
    }

    #[inline]
    pub fn curvature(&self) -> T {
        self.a + self.a
    }
}

/// Convex function on the real line made of quadratic pieces.
///
/// Piece `k` lives on `[breaks[k-1], breaks[k]]` (unbounded at both ends).
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseQuadratic<T> {
    breaks: Vec<T>,
    pieces: Vec<Quadratic<T>>,
}

/// Outcome of a scalar proximal step: the minimizer and, when it sits on a
/// breakpoint, that breakpoint's index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxPoint<T> {
    pub x: T,
    pub kink: Option<usize>,
}

impl<T: Scalar> PiecewiseQuadratic<T> {
    /// Validates strictly increasing breaks, continuity, and convexity.
    pub fn new(breaks: Vec<T>, pieces: Vec<Quadratic<T>>) -> Result<Self, T> {
        if pieces.len() != breaks.len() + 1 {
            return Err(param_err(format!(
                "{} breakpoints need {} pieces, got {}",
                breaks.len(),
                breaks.len() + 1,
                pieces.len()
            )));
        }
        if breaks.iter().any(|b| !b.is_finite()) || pieces.iter().any(|p| !(p.a.is_finite() && p.b.is_finite() && p.c.is_finite())) {
            return Err(param_err("non-finite piecewise coefficients"));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param_err("breakpoints must be strictly increasing"));
        }
        if pieces.iter().any(|p| p.a < T::zero()) {
            return Err(param_err("piece with negative curvature is not convex"));
        }
        let tol = T::lit(1e-9);
        for (k, &bk) in breaks.iter().enumerate() {
            let (l, r) = (pieces[k], pieces[k + 1]);
            let (vl, vr) = (l.value(bk), r.value(bk));
            let scale = T::one() + vl.abs().max(vr.abs());
            if (vl - vr).abs() > tol * scale {
                return Err(param_err(format!("discontinuity at breakpoint {bk}")));
            }
            let (dl, dr) = (l.slope(bk), r.slope(bk));
            if dl > dr + tol * (T::one() + dl.abs().max(dr.abs())) {
                return Err(param_err(format!("slope decreases at breakpoint {bk}")));
            }
        }
        Ok(Self { breaks, pieces }.merged())
    }

    /// Drops breakpoints whose neighbouring pieces coincide.
    fn merged(self) -> Self {
        let mut breaks = Vec::with_capacity(self.breaks.len());
        let mut pieces = vec![self.pieces[0]];
        for (k, &b) in self.breaks.iter().enumerate() {
            let next = self.pieces[k + 1];
            let last = *pieces.last().unwrap();
            if last == next {
                continue;
            }
            breaks.push(b);
            pieces.push(next);
        }
        Self { breaks, pieces }
    }

    pub fn breaks(&self) -> &[T] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Quadratic<T>] {
        &self.pieces
    }

    pub fn is_piecewise_linear(&self) -> bool {
        self.pieces.iter().all(|p| p.a == T::zero())
    }

    /// Index of the piece whose closed interval contains `x`, preferring the
    /// right piece on a breakpoint.
    #[inline]
    pub fn piece_index(&self, x: T) -> usize {
        self.breaks.partition_point(|&b| b <= x)
    }

    /// Interval `(lo, hi)` of piece `k`, infinite at the ends.
    pub fn piece_interval(&self, k: usize) -> (T, T) {
        let lo = if k == 0 { T::neg_infinity() } else { self.breaks[k - 1] };
        let hi = if k == self.breaks.len() { T::infinity() } else { self.breaks[k] };
        (lo, hi)
    }

    #[inline]
    pub fn value(&self, x: T) -> T {
        self.pieces[self.piece_index(x)].value(x)
    }

    /// Left derivative at `x`.
    pub fn slope_left(&self, x: T) -> T {
        let k = self.breaks.partition_point(|&b| b < x);
        self.pieces[k].slope(x)
    }

    /// Right derivative at `x`.
    pub fn slope_right(&self, x: T) -> T {
        self.pieces[self.piece_index(x)].slope(x)
    }

    /// Subdifferential `[left, right]` at `x`.
    pub fn subdifferential(&self, x: T) -> (T, T) {
        (self.slope_left(x), self.slope_right(x))
    }

    /// The documented subgradient selection: at a breakpoint whose
    /// subdifferential contains zero the selection is zero, otherwise the
    /// one-sided derivative of the piece nearer to zero.
    pub fn select_subgradient(&self, x: T) -> T {
        let (lo, hi) = self.subdifferential(x);
        if lo <= T::zero() && T::zero() <= hi {
            T::zero()
        } else if hi < T::zero() {
            hi
        } else {
            lo
        }
    }

    /// Breakpoint index equal to `x`, if any.
    pub fn kink_at(&self, x: T) -> Option<usize> {
        let k = self.breaks.partition_point(|&b| b < x);
        (k < self.breaks.len() && self.breaks[k] == x).then_some(k)
    }

    /// `argmin_x phi(x) + (x - x0)^2 / (2 gamma)` for `gamma > 0`.
    pub fn prox(&self, x0: T, gamma: T) -> ProxPoint<T> {
        let inv = gamma.recip();
        let g = |p: &Quadratic<T>, x: T| p.slope(x) + (x - x0) * inv;
        // The objective's derivative is monotone: find the first piece or
        // breakpoint where it crosses zero.
        let n = self.pieces.len();
        // Binary search over breakpoints on the sign of the right derivative.
        let first_nonneg = {
            let (mut lo, mut hi) = (0usize, self.breaks.len());
            while lo < hi {
                let mid = (lo + hi) / 2;
                let b = self.breaks[mid];
                if g(&self.pieces[mid + 1], b) >= T::zero() {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            lo
        };
        // Zero lies in piece `first_nonneg` or at breakpoint `first_nonneg`.
        let k = first_nonneg;
        if k < self.breaks.len() {
            let b = self.breaks[k];
            if g(&self.pieces[k], b) <= T::zero() {
                return ProxPoint { x: b, kink: Some(k) };
            }
        }
        let p = self.pieces[k.min(n - 1)];
        let x = (x0 * inv - p.b) / (p.curvature() + inv);
        let (lo, hi) = self.piece_interval(k);
        ProxPoint { x: x.max(lo).min(hi), kink: None }
    }
}

/// A convex, non-decreasing cost on `[0, inf)` described by quadratic
/// segments; coefficients are in ascending powers of the shortfall `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfLineCost<T> {
    /// Strictly increasing positive segment boundaries.
    #[serde(default = "Vec::new")]
    pub breaks: Vec<T>,
    /// `coeffs[k] = [c0, c1, c2]` (shorter vectors are zero-padded).
    pub coeffs: Vec<Vec<T>>,
}

impl<T: Scalar> HalfLineCost<T> {
    pub fn linear(slope: T) -> Self {
        Self { breaks: Vec::new(), coeffs: vec![vec![T::zero(), slope]] }
    }

    fn segment(&self, k: usize) -> Result<Quadratic<T>, T> {
        let c = &self.coeffs[k];
        if c.is_empty() || c.len() > 3 {
            return Err(param_err("segment polynomials must have degree at most 2"));
        }
        let get = |i: usize| c.get(i).copied().unwrap_or_else(T::zero);
        Ok(Quadratic::new(get(2), get(1), get(0)))
    }

    pub fn validate(&self) -> Result<(), T> {
        if self.coeffs.len() != self.breaks.len() + 1 {
            return Err(param_err("half-line cost needs one more segment than breakpoints"));
        }
        if self.breaks.iter().any(|&b| b <= T::zero()) {
            return Err(param_err("half-line breakpoints must be positive"));
        }
        let pieces = (0..self.coeffs.len()).map(|k| self.segment(k)).collect::<Result<Vec<_>, T>>()?;
        PiecewiseQuadratic::new(self.breaks.clone(), pieces.clone())?;
        if pieces[0].slope(T::zero()) < T::zero() {
            return Err(param_err("half-line cost must be non-decreasing"));
        }
        Ok(())
    }

    pub fn value(&self, s: T) -> T {
        let k = self.breaks.partition_point(|&b| b <= s);
        self.segment(k).map(|q| q.value(s)).unwrap_or_else(|_| T::nan())
    }

    /// Pieces of `x -> self(x)` for `x >= 0`, plus breaks.
    fn pieces_positive(&self) -> Result<(Vec<T>, Vec<Quadratic<T>>), T> {
        let pieces = (0..self.coeffs.len()).map(|k| self.segment(k)).collect::<Result<Vec<_>, T>>()?;
        Ok((self.breaks.clone(), pieces))
    }

    /// Pieces of `x -> self(-x)` for `x <= 0`, left to right, plus breaks.
    fn pieces_negative(&self) -> Result<(Vec<T>, Vec<Quadratic<T>>), T> {
        let (breaks, pieces) = self.pieces_positive()?;
        let breaks = breaks.iter().rev().map(|&b| -b).collect();
        let pieces = pieces.iter().rev().map(|q| Quadratic::new(q.a, -q.b, q.c)).collect();
        Ok((breaks, pieces))
    }
}

/// Builds `x -> pos(x)` for `x >= 0` and `x -> neg(-x)` for `x < 0`.
pub fn two_sided<T: Scalar>(pos: &HalfLineCost<T>, neg: &HalfLineCost<T>) -> Result<PiecewiseQuadratic<T>, T> {
    pos.validate()?;
    neg.validate()?;
    let (pb, pp) = pos.pieces_positive()?;
    let (nb, np) = neg.pieces_negative()?;
    let (p0, n0) = (pp[0].value(T::zero()), np[np.len() - 1].value(T::zero()));
    if (p0 - n0).abs() > T::lit(1e-12) * (T::one() + p0.abs()) {
        return Err(param_err("the two cost branches must agree at zero"));
    }
    let mut breaks = nb;
    breaks.push(T::zero());
    breaks.extend(pb);
    let mut pieces = np;
    pieces.extend(pp);
    PiecewiseQuadratic::new(breaks, pieces)
}
