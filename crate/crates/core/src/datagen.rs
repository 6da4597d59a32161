//! Synthetic multi-task quantile regression with controlled task relatedness.
//!
//! True coefficients live on a sphere of radius `signal`. Inlier tasks sit at
//! distance exactly `delta` from `signal * e1`; outlier tasks are uniform on
//! the sphere.
//!
//! Randomness comes from ChaCha20 seeded with the 64-bit `seed`; the stream
//! number separates uses: stream 0 picks the outliers, stream `1 + j` draws
//! the direction of task `j`. Sample generation uses its own seed with
//! stream `j` for task `j`, so tasks can be generated in any order.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{param_err, Result};
use crate::losses::{MultiTaskDataset, SamplePoint, TaskDataset};
use crate::scalar::{norm2, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RelatednessSpec<T> {
    pub m: usize,
    /// Outlier fraction; `floor(epsilon * m)` tasks are outliers.
    pub epsilon: T,
    pub delta: T,
    pub dim: usize,
    #[serde(default = "default_signal")]
    pub signal: T,
    pub seed: u64,
}

fn default_signal<T: Scalar>() -> T {
    T::lit(2.0)
}

impl<T: Scalar> RelatednessSpec<T> {
    pub fn new(m: usize, epsilon: T, delta: T, dim: usize, seed: u64) -> Self {
        Self { m, epsilon, delta, dim, signal: default_signal(), seed }
    }

    pub fn num_outliers(&self) -> usize {
        (self.epsilon * T::from_usize_lossy(self.m)).floor().to_usize().unwrap_or(0).min(self.m)
    }

    /// Rotation angle `2 arcsin(delta / (2 signal))` of the inlier tasks.
    pub fn angle(&self) -> T {
        T::lit(2.0) * (self.delta / (T::lit(2.0) * self.signal)).asin()
    }

    pub fn validate(&self) -> Result<(), T> {
        if self.m == 0 || self.dim == 0 {
            return Err(param_err("need at least one task and one dimension"));
        }
        if !(self.epsilon >= T::zero() && self.epsilon < T::one()) {
            return Err(param_err(format!("outlier fraction must lie in [0, 1), got {}", self.epsilon)));
        }
        if !(self.signal > T::zero()) {
            return Err(param_err("signal radius must be positive"));
        }
        if !(self.delta >= T::zero() && self.delta <= T::lit(2.0) * self.signal) {
            return Err(param_err(format!("delta must lie in [0, 2 * signal], got {}", self.delta)));
        }
        if self.dim == 1 && self.delta != T::zero() && self.delta != T::lit(2.0) * self.signal {
            return Err(param_err("in one dimension delta must be 0 or 2 * signal"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    /// Column `j` is the slope vector of task `j`.
    pub gamma_star: Vec<Vec<T>>,
    /// Sorted inlier task indices.
    pub inliers: Vec<usize>,
    /// Sorted outlier task indices.
    pub outliers: Vec<usize>,
    pub spec: RelatednessSpec<T>,
}

impl<T: Scalar> GroundTruth<T> {
    /// Full coefficients `(noise_sd * Phi^{-1}(tau), gamma_j)`: the
    /// conditional `tau`-quantile model of the generated responses.
    pub fn theta_star(&self, tau: T, noise_sd: T) -> Result<Vec<Vec<T>>, T> {
        let icpt = noise_sd * normal_quantile(tau)?;
        Ok(self
            .gamma_star
            .iter()
            .map(|g| std::iter::once(icpt).chain(g.iter().copied()).collect())
            .collect())
    }

    pub fn is_inlier(&self, j: usize) -> bool {
        self.inliers.binary_search(&j).is_ok()
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gaussian<T: Scalar>(r: &mut ChaCha20Rng) -> T {
    let v: f64 = StandardNormal.sample(r);
    T::lit(v)
}

/// Uniform direction on the unit sphere of the given dimension.
fn unit_vector<T: Scalar>(r: &mut ChaCha20Rng, dim: usize) -> Vec<T> {
    loop {
        let v: Vec<T> = (0..dim).map(|_| gaussian(r)).collect();
        let n = norm2(&v);
        if n > T::lit(1e-8) {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Inverse of the standard normal distribution function.
///
/// A rational approximation (relative error about 1e-9) refined by one
/// Halley step against the complementary error function.
pub fn normal_quantile<T: Scalar>(p: T) -> Result<T, T> {
    if !(p > T::zero() && p < T::one()) {
        return Err(param_err(format!("probability must lie in (0, 1), got {p}")));
    }
    let p = p.as_f64();
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let low = 0.02425;
    let x = if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(T::lit(x - u / (1.0 + x * u / 2.0)))
}

/// Draws the true slope vectors and the inlier set.
pub fn generate_related_coefficients<T: Scalar>(spec: &RelatednessSpec<T>) -> Result<GroundTruth<T>, T> {
    spec.validate()?;
    let (m, dim) = (spec.m, spec.dim);
    let k = spec.num_outliers();
    let mut outliers = index::sample(&mut rng(spec.seed, 0), m, k).into_vec();
    outliers.sort_unstable();
    let inliers: Vec<usize> = (0..m).filter(|j| outliers.binary_search(j).is_err()).collect();
    let alpha = spec.angle();
    let (ca, sa) = (spec.signal * alpha.cos(), spec.signal * alpha.sin());
    let gamma_star = (0..m)
        .map(|j| {
            let mut r = rng(spec.seed, 1 + j as u64);
            if outliers.binary_search(&j).is_ok() {
                unit_vector::<T>(&mut r, dim).into_iter().map(|x| spec.signal * x).collect()
            } else {
                let mut g = vec![T::zero(); dim];
                g[0] = ca;
                if dim > 1 {
                    for (gi, e) in g[1..].iter_mut().zip(unit_vector::<T>(&mut r, dim - 1)) {
                        *gi = sa * e;
                    }
                } else if alpha > T::lit(3.0) {
                    g[0] = -spec.signal;
                }
                g
            }
        })
        .collect();
    Ok(GroundTruth { gamma_star, inliers, outliers, spec: spec.clone() })
}

/// Samples `n` points per task: `x ~ N(0, I)`, `y = x'gamma_j + noise_sd * N(0, 1)`,
/// with emitted covariates `(1, x)`. `tau` only names the tasks' target
/// quantile and is validated here; it does not change the draws.
pub fn generate_quantile_tasks<T: Scalar>(truth: &GroundTruth<T>, n: usize, tau: T, noise_sd: T, seed: u64) -> Result<MultiTaskDataset<T>, T> {
    if n == 0 {
        return Err(param_err("need at least one sample per task"));
    }
    if !(noise_sd > T::zero()) {
        return Err(param_err(format!("noise level must be positive, got {noise_sd}")));
    }
    if !(tau > T::zero() && tau < T::one()) {
        return Err(param_err(format!("quantile level must lie in (0, 1), got {tau}")));
    }
    let dim = truth.spec.dim;
    let tasks = truth
        .gamma_star
        .iter()
        .enumerate()
        .map(|(j, gamma)| {
            let mut r = rng(seed, j as u64);
            let samples = (0..n)
                .map(|_| {
                    let x: Vec<T> = (0..dim).map(|_| gaussian(&mut r)).collect();
                    let mean: T = x.iter().zip(gamma).map(|(&a, &b)| a * b).sum();
                    let y = mean + noise_sd * gaussian::<T>(&mut r);
                    let mut cov = Vec::with_capacity(dim + 1);
                    cov.push(T::one());
                    cov.extend(x);
                    SamplePoint::new(cov, y)
                })
                .collect();
            TaskDataset::new(format!("task{j:03}"), samples)
        })
        .collect::<Result<Vec<_>, T>>()?;
    MultiTaskDataset::new(tasks)
}
