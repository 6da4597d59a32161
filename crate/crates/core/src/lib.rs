//! Adaptive data fusion for multi-task nonsmooth convex estimation.
//!
//! Each task `j` owns an empirical risk `f_j`; the fused estimator solves
//!
//! ```text
//! min_{theta_1..theta_m, beta}  sum_j w_j [ f_j(theta_j) + lambda_j |theta_j - beta|_2 ]
//! ```
//!
//! With `lambda = 0` this is single-task learning (STL); for large `lambda`
//! every `theta_j` collapses onto the pooled (DP) minimizer. In between, the
//! penalty shrinks related tasks toward a learned center while leaving
//! unrelated tasks close to their own solutions.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.
//!
//! ```
//! use mtfuse::{solve_fused, Config, Dataset, Loss, Task};
//!
//! let data = Dataset::new(vec![
//!     Task::location("a", &[0.0, 1.0, 2.0]).unwrap(),
//!     Task::location("b", &[1.0, 2.0, 3.0]).unwrap(),
//! ])
//! .unwrap();
//! let fit = solve_fused(&data, &Loss::check(0.5).unwrap(), &Config::uniform(2, 0.1)).unwrap();
//! assert_eq!(fit.theta_hat.len(), 2);
//! ```

// `!(x > 0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
mod linalg;
pub mod losses;
pub mod oracles;
pub mod piecewise;
pub mod scalar;
pub mod solver;
pub mod tuning;

pub use error::{BestIterate, Error, Result};
pub use losses::{
    check_loss, empirical_risk, empirical_subgradient, loss_subgradient, loss_value, tau_from_costs, LossSpec,
    MultiTaskDataset, SamplePoint, TaskDataset,
};
pub use scalar::Scalar;
pub use solver::{
    objective_value, optimality_residual, pooling_threshold, prox_group_norm, solve_dp, solve_fused, solve_stl,
    theta_subproblem, FusionConfig, FusionSolution, InnerOptions, SolverDiagnostics,
};

pub type Sample = SamplePoint<f64>;
pub type Task = TaskDataset<f64>;
pub type Dataset = MultiTaskDataset<f64>;
pub type Loss = LossSpec<f64>;
pub type Config = FusionConfig<f64>;
pub type Solution = FusionSolution<f64>;
pub type Truth = datagen::GroundTruth<f64>;
pub type Relatedness = datagen::RelatednessSpec<f64>;
pub type Plan = tuning::CvPlan<f64>;
pub type Report = tuning::CvReport<f64>;
