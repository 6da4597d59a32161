use mtfuse::{empirical_risk, Dataset, Loss};

use crate::error::{data_err, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    /// `max_j |theta_hat_j - theta_star_j|`.
    pub max_error_all: Option<f64>,
    /// The same maximum over the inlier tasks.
    pub max_error_s: Option<f64>,
    /// Over the outliers; `None` when there are none.
    pub max_error_sc: Option<f64>,
    /// Mean over tasks of the held-out empirical risk.
    pub avg_test_loss: Option<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn max_over(errors: &[f64], idx: impl Iterator<Item = usize>) -> Option<f64> {
    idx.map(|j| errors[j]).fold(None, |acc, e| Some(acc.map_or(e, |a: f64| a.max(e))))
}

/// Estimation errors against known coefficients. `inliers` must be sorted.
pub fn evaluate_metrics(theta_hat: &[Vec<f64>], theta_star: &[Vec<f64>], inliers: &[usize]) -> Result<MetricsReport> {
    let m = theta_star.len();
    if theta_hat.len() != m {
        return Err(mtfuse::Error::Shape(format!("{} estimates for {m} tasks", theta_hat.len())).into());
    }
    if let Some(j) = (0..m).find(|&j| theta_hat[j].len() != theta_star[j].len()) {
        return Err(mtfuse::Error::Shape(format!("estimate {j} has length {}, expected {}", theta_hat[j].len(), theta_star[j].len())).into());
    }
    if inliers.iter().any(|&j| j >= m) {
        return Err(data_err("inlier index out of range"));
    }
    let errors: Vec<f64> = theta_hat.iter().zip(theta_star).map(|(a, b)| distance(a, b)).collect();
    Ok(MetricsReport {
        max_error_all: max_over(&errors, 0..m),
        max_error_s: max_over(&errors, inliers.iter().copied()),
        max_error_sc: max_over(&errors, (0..m).filter(|j| inliers.binary_search(j).is_err())),
        avg_test_loss: None,
    })
}

/// Mean over tasks of each task's empirical risk on `test`.
pub fn average_test_loss(spec: &Loss, theta_hat: &[Vec<f64>], test: &Dataset) -> Result<f64> {
    if theta_hat.len() != test.num_tasks() {
        return Err(mtfuse::Error::Shape(format!("{} estimates for {} test tasks", theta_hat.len(), test.num_tasks())).into());
    }
    let risks = test
        .tasks()
        .iter()
        .zip(theta_hat)
        .map(|(t, th)| empirical_risk(spec, th, t))
        .collect::<mtfuse::Result<Vec<f64>>>()?;
    Ok(risks.iter().sum::<f64>() / risks.len() as f64)
}
