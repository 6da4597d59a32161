use mtfuse::datagen::{generate_quantile_tasks, generate_related_coefficients, normal_quantile, RelatednessSpec};
use mtfuse::{solve_stl, InnerOptions, Loss, Relatedness};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// `erf` by its Maclaurin series; accurate to rounding for |x| < 3.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let next = term / (2 * n + 1) as f64;
        sum += next;
        if next.abs() < 1e-18 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn quantile_by_bisection(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
    let (mut lo, mut hi) = (-4.0, 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn normal_quantile_examples() {
    assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
    assert!((normal_quantile(0.9f64).unwrap() - 1.2815515655).abs() < 1e-9);
    assert!((normal_quantile(0.975f64).unwrap() - 1.9599639845).abs() < 1e-9);
    assert!(normal_quantile(-0.1f64).is_err());
    assert!(normal_quantile(f64::NAN).is_err());
}

#[test]
fn normal_quantile_matches_bisection_oracle() {
    for i in 1..200 {
        let p = f64::from(i) / 200.0;
        let want = quantile_by_bisection(p);
        let got = normal_quantile(p).unwrap();
        assert!((got - want).abs() < 1e-9, "p={p}: {got} vs {want}");
    }
    for p in [1e-4, 0.001, 0.01, 0.02, 0.03, 0.97, 0.98, 0.99, 0.999] {
        assert!((normal_quantile(p).unwrap() - quantile_by_bisection(p)).abs() < 1e-9, "p={p}");
    }
}

#[test]
fn sphere_invariants_on_random_specs() {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let m = rng.random_range(1..=30);
        let dim = rng.random_range(2..=25);
        let signal: f64 = rng.random_range(0.5..3.0);
        let spec = RelatednessSpec {
            m,
            epsilon: rng.random_range(0.0..0.9),
            delta: rng.random_range(0.0..=2.0 * signal),
            dim,
            signal,
            seed: rng.random(),
        };
        let truth = generate_related_coefficients(&spec).unwrap();
        assert_eq!(truth.outliers.len(), spec.num_outliers());
        assert_eq!(truth.inliers.len() + truth.outliers.len(), m);
        for (j, g) in truth.gamma_star.iter().enumerate() {
            assert_eq!(g.len(), dim);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - signal).abs() < 1e-12);
            if truth.is_inlier(j) {
                let gap = ((g[0] - signal).powi(2) + g[1..].iter().map(|v| v * v).sum::<f64>()).sqrt();
                assert!((gap - spec.delta).abs() < 1e-12, "gap {gap} vs {}", spec.delta);
            }
        }
    }
}

#[test]
fn outlier_count_is_floor() {
    for (m, eps, k) in [(20, 0.2, 4), (20, 0.1, 2), (7, 0.5, 3), (3, 0.2, 0), (10, 0.0, 0)] {
        let truth = generate_related_coefficients(&Relatedness::new(m, eps, 1.0, 5, 1)).unwrap();
        assert_eq!(truth.outliers.len(), k);
    }
}

#[test]
fn outlier_set_ignores_delta_and_dim() {
    let a = generate_related_coefficients(&Relatedness::new(20, 0.2, 0.0, 5, 17)).unwrap();
    let b = generate_related_coefficients(&Relatedness::new(20, 0.2, 1.5, 12, 17)).unwrap();
    assert_eq!(a.outliers, b.outliers);
}

#[test]
fn antipode_and_invalid_delta() {
    let truth = generate_related_coefficients(&Relatedness::new(4, 0.0, 4.0, 3, 5)).unwrap();
    for g in &truth.gamma_star {
        assert!((g[0] + 2.0).abs() < 1e-12 && g[1].abs() < 1e-12 && g[2].abs() < 1e-12);
    }
    assert!(generate_related_coefficients(&Relatedness::new(4, 0.0, 4.5, 3, 5)).is_err());
    assert!(generate_related_coefficients(&Relatedness::new(4, 1.0, 1.0, 3, 5)).is_err());
}

#[test]
fn theta_star_prepends_intercept() {
    let truth = generate_related_coefficients(&Relatedness::new(3, 0.0, 0.0, 2, 1)).unwrap();
    let th = truth.theta_star(0.9, 0.5).unwrap();
    for t in &th {
        assert!((t[0] - 0.5 * 1.2815515655446004).abs() < 1e-9);
        assert_eq!(&t[1..], &[2.0, 0.0]);
    }
}

#[test]
fn shapes() {
    let truth = generate_related_coefficients(&Relatedness::new(50, 0.1, 1.0, 20, 3)).unwrap();
    let data = generate_quantile_tasks(&truth, 200, 0.5, 0.5, 4).unwrap();
    assert_eq!(data.num_tasks(), 50);
    assert_eq!(data.dim(), 21);
    assert!(data.sample_counts().iter().all(|&n| n == 200));
    assert!(data.tasks().iter().all(|t| t.samples().iter().all(|s| s.covariates[0] == 1.0)));
    assert!(generate_quantile_tasks(&truth, 0, 0.5, 0.5, 4).is_err());
    assert!(generate_quantile_tasks(&truth, 10, 0.5, 0.0, 4).is_err());
}

#[test]
fn generation_is_deterministic() {
    let spec = Relatedness::new(6, 0.2, 0.8, 4, 11);
    let a = generate_related_coefficients(&spec).unwrap();
    let b = generate_related_coefficients(&spec).unwrap();
    assert_eq!(a, b);
    let da = generate_quantile_tasks(&a, 30, 0.7, 0.5, 12).unwrap();
    let db = generate_quantile_tasks(&b, 30, 0.7, 0.5, 12).unwrap();
    assert_eq!(da, db);
    let dc = generate_quantile_tasks(&a, 30, 0.7, 0.5, 13).unwrap();
    assert_ne!(da, dc);
}

#[test]
fn noise_quantile_matches_model() {
    let tau = 0.8;
    let sd = 0.5;
    let n = 100_000;
    let truth = generate_related_coefficients(&Relatedness::new(1, 0.0, 1.0, 3, 8)).unwrap();
    let data = generate_quantile_tasks(&truth, n, tau, sd, 9).unwrap();
    let g = &truth.gamma_star[0];
    let mut resid: Vec<f64> = data.tasks()[0]
        .samples()
        .iter()
        .map(|s| s.response - s.covariates[1..].iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    resid.sort_by(f64::total_cmp);
    let q = resid[(tau * n as f64).ceil() as usize - 1];
    let z = quantile_by_bisection(tau);
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() / sd;
    let se = (tau * (1.0 - tau)).sqrt() / (density * (n as f64).sqrt());
    assert!((q - sd * z).abs() <= 3.0 * se, "{q} vs {}", sd * z);
}

#[test]
fn near_noiseless_recovery() {
    let truth = generate_related_coefficients(&Relatedness::new(3, 0.0, 0.0, 5, 2)).unwrap();
    let tau = 0.3;
    let sd = 1e-12;
    let data = generate_quantile_tasks(&truth, 500, tau, sd, 3).unwrap();
    let star = truth.theta_star(tau, sd).unwrap();
    let spec = Loss::check(tau).unwrap();
    for (task, want) in data.tasks().iter().zip(&star) {
        let th = solve_stl(task, &spec, &InnerOptions::default()).unwrap();
        let err = th.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-3, "error {err}");
    }
}
