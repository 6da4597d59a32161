use mtfuse::oracles::{brute_force_minimize, exact_quantile_location, reference_solve_fused, DEFAULT_CELL_BUDGET};
use mtfuse::piecewise::HalfLineCost;
use mtfuse::{
    empirical_risk, objective_value, optimality_residual, pooling_threshold, prox_group_norm, solve_dp, solve_fused,
    solve_stl, theta_subproblem, Config, Dataset, Error, InnerOptions, Loss, Sample, Task,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn opts() -> InnerOptions<f64> {
    InnerOptions::default()
}

fn random_dataset(rng: &mut ChaCha20Rng, m: usize, n_max: usize, d: usize) -> Dataset {
    let tasks = (0..m)
        .map(|j| {
            let n = rng.random_range(d.max(2)..=n_max);
            let shift: f64 = rng.random_range(-1.0..1.0);
            let samples = (0..n)
                .map(|_| {
                    let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                    x[0] = 1.0;
                    let y = x.iter().sum::<f64>() * 0.5 + shift + rng.random_range(-1.0..1.0);
                    Sample::new(x, y)
                })
                .collect();
            Task::new(format!("t{j}"), samples).unwrap()
        })
        .collect();
    Dataset::new(tasks).unwrap()
}

fn tight() -> Config {
    let mut c = Config::uniform(1, 0.0);
    c.tol_abs = 1e-10;
    c.tol_rel = 1e-9;
    c.max_outer_iters = 20_000;
    c
}

fn config(weights: Vec<f64>, lambdas: Vec<f64>) -> Config {
    Config { weights, lambdas, ..tight() }
}

#[test]
fn objective_examples() {
    let data = Dataset::new(vec![Task::location("a", &[0.0]).unwrap()]).unwrap();
    let check = Loss::check(0.5).unwrap();
    assert_eq!(objective_value(&data, &check, &[1.0], &[1.0], &[vec![0.0]], &[0.0]).unwrap(), 0.0);
    assert_eq!(objective_value(&data, &check, &[1.0], &[1.0], &[vec![1.0]], &[0.0]).unwrap(), 1.5);
    let a = objective_value(&data, &check, &[1.0], &[0.0], &[vec![1.0]], &[7.0]).unwrap();
    let b = objective_value(&data, &check, &[1.0], &[0.0], &[vec![1.0]], &[-3.0]).unwrap();
    assert_eq!(a, b);
    assert!(objective_value(&data, &check, &[1.0], &[1.0], &[vec![1.0, 2.0]], &[0.0]).is_err());
}

#[test]
fn prox_examples() {
    let p: Vec<f64> = prox_group_norm(&[3.0, 4.0], 1.0);
    assert!((p[0] - 2.4).abs() < 1e-15 && (p[1] - 3.2).abs() < 1e-15);
    assert_eq!(prox_group_norm(&[0.3, 0.4], 1.0), vec![0.0, 0.0]);
    assert_eq!(prox_group_norm(&[0.3, -7.0], 0.0), vec![0.3, -7.0]);
}

#[test]
fn prox_matches_grid() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..10 {
        let v = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let kappa: f64 = rng.random_range(0.0..2.0);
        let f = |z: &[f64]| kappa * (z[0] * z[0] + z[1] * z[1]).sqrt() + 0.5 * ((z[0] - v[0]).powi(2) + (z[1] - v[1]).powi(2));
        let (_, best) = brute_force_minimize(f, &[-2.5, -2.5], &[2.5, 2.5], 0.0025, DEFAULT_CELL_BUDGET).unwrap();
        let p = prox_group_norm(&v, kappa);
        assert!(f(&p) <= best + 1e-12);
        assert!(f(&p) >= best - 1e-4);
    }
}

#[test]
fn theta_subproblem_examples() {
    let one = Task::location("a", &[1.0]).unwrap();
    let th = theta_subproblem(&one, &Loss::Quadratic, &[0.0], 1.0, 1.0, 1e-12).unwrap();
    assert!((th[0] - 0.5).abs() < 1e-12);
    for s in [0.1, 1.0, 10.0] {
        let th = theta_subproblem(&one, &Loss::check(0.5).unwrap(), &[1.0], s, 1.0, 1e-12).unwrap();
        assert!((th[0] - 1.0).abs() < 1e-12);
    }
    let zero = Task::location("b", &[0.0]).unwrap();
    let th = theta_subproblem(&zero, &Loss::check(0.5).unwrap(), &[2.0], 1.0, 1.0, 1e-12).unwrap();
    assert!((th[0] - 1.5).abs() < 1e-12);
    assert!(theta_subproblem(&zero, &Loss::Quadratic, &[2.0], 0.0, 1.0, 1e-12).is_err());
}

#[test]
fn theta_subproblem_multivariate_matches_grid() {
    let task = Task::new(
        "t",
        vec![
            Sample::new(vec![1.0, 0.5], 1.0),
            Sample::new(vec![1.0, -1.0], 0.2),
            Sample::new(vec![1.0, 2.0], 3.0),
            Sample::new(vec![1.0, 0.0], -0.5),
        ],
    )
    .unwrap();
    let spec = Loss::check(0.7).unwrap();
    let target = [0.3, -0.4];
    let th = theta_subproblem(&task, &spec, &target, 0.8, 2.0, 1e-10).unwrap();
    let f = |t: &[f64]| {
        2.0 * empirical_risk(&spec, t, &task).unwrap() + 0.4 * ((t[0] - target[0]).powi(2) + (t[1] - target[1]).powi(2))
    };
    let (_, best) = brute_force_minimize(f, &[-3.0, -3.0], &[3.0, 3.0], 0.002, DEFAULT_CELL_BUDGET).unwrap();
    assert!(f(&th) <= best + 1e-12);
}

#[test]
fn two_task_instance_matches_brute_force() {
    let data = Dataset::new(vec![Task::location("a", &[0.0]).unwrap(), Task::location("b", &[2.0]).unwrap()]).unwrap();
    let spec = Loss::check(0.5).unwrap();
    let cfg = config(vec![1.0, 1.0], vec![0.6, 0.6]);
    let fit = solve_fused(&data, &spec, &cfg).unwrap();
    assert!((fit.objective - 1.0).abs() < 1e-6);
    assert!(fit.pooled_mask.iter().all(|&p| p));
    let f = |v: &[f64]| objective_value(&data, &spec, &cfg.weights, &cfg.lambdas, &[vec![v[0]], vec![v[1]]], &[v[2]]).unwrap();
    let (point, best) = brute_force_minimize(f, &[-1.0; 3], &[3.0; 3], 0.02, DEFAULT_CELL_BUDGET).unwrap();
    assert!((best - 1.0).abs() < 1e-9, "{point:?} {best}");
    let r = optimality_residual(&data, &spec, &cfg, &fit.theta_hat, &fit.beta_hat).unwrap();
    assert!(r <= 1e-6);
    let bumped = vec![vec![fit.theta_hat[0][0] + 0.1], fit.theta_hat[1].clone()];
    assert!(optimality_residual(&data, &spec, &cfg, &bumped, &fit.beta_hat).unwrap() > r);
}

#[test]
fn zero_penalty_reduces_to_single_task() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..10 {
        let m = rng.random_range(1..=5);
        let d = rng.random_range(1..=4);
        let data = random_dataset(&mut rng, m, 30, d);
        let spec = Loss::check(rng.random_range(0.1..0.9)).unwrap();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
        let cfg = config(w.clone(), vec![0.0; m]);
        let fit = solve_fused(&data, &spec, &cfg).unwrap();
        let mut stl_obj = 0.0;
        for (j, t) in data.tasks().iter().enumerate() {
            let th = solve_stl(t, &spec, &opts()).unwrap();
            stl_obj += w[j] * empirical_risk(&spec, &th, t).unwrap();
        }
        assert!((fit.objective - stl_obj).abs() <= 1e-8, "{} vs {stl_obj}", fit.objective);
        let total: f64 = w.iter().sum();
        for k in 0..d {
            let mean: f64 = (0..m).map(|j| w[j] * fit.theta_hat[j][k]).sum::<f64>() / total;
            assert!((fit.beta_hat[k] - mean).abs() < 1e-12);
        }
        let r = optimality_residual(&data, &spec, &cfg, &fit.theta_hat, &fit.beta_hat).unwrap();
        assert!(r <= 1e-9 * m as f64, "residual {r}");
    }
}

#[test]
fn large_penalty_pools_onto_dp() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for _ in 0..8 {
        let m = rng.random_range(2..=4);
        let d = rng.random_range(1..=3);
        let data = random_dataset(&mut rng, m, 25, d);
        let spec = Loss::check(rng.random_range(0.2..0.8)).unwrap();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
        let lam = pooling_threshold(&data, &spec, &w, &opts()).unwrap();
        let fit = solve_fused(&data, &spec, &config(w.clone(), vec![lam; m])).unwrap();
        assert!(fit.pooled_mask.iter().all(|&p| p));
        let dp = solve_dp(&data, &spec, Some(&w), &opts()).unwrap();
        let dp_obj = objective_value(&data, &spec, &w, &vec![lam; m], &vec![dp.clone(); m], &dp).unwrap();
        assert!((fit.objective - dp_obj).abs() <= 1e-8 * (1.0 + dp_obj));
        for col in &fit.theta_hat {
            assert_eq!(col, &fit.beta_hat);
        }
    }
}

#[test]
fn single_task_location_examples() {
    let spec = Loss::check(0.5).unwrap();
    let t = Task::location("t", &[1.0, 2.0, 3.0]).unwrap();
    let th = solve_stl(&t, &spec, &opts()).unwrap();
    let at_two = empirical_risk(&spec, &[2.0], &t).unwrap();
    assert_eq!(empirical_risk(&spec, &th, &t).unwrap(), at_two);

    let spec = Loss::check(0.9).unwrap();
    let d: Vec<f64> = (1..=10).map(f64::from).collect();
    let t = Task::location("t", &d).unwrap();
    let th = solve_stl(&t, &spec, &opts()).unwrap();
    let f = |q: &[f64]| empirical_risk(&spec, q, &t).unwrap();
    let (q, best) = brute_force_minimize(f, &[0.0], &[11.0], 1e-4, DEFAULT_CELL_BUDGET).unwrap();
    assert!((9.0..=10.0).contains(&q[0]));
    assert!((f(&th) - best).abs() < 1e-12);
    let (lo, hi) = exact_quantile_location(&d, 0.9).unwrap();
    assert!(lo <= th[0] && th[0] <= hi);
}

#[test]
fn quadratic_single_task_is_least_squares() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let data = random_dataset(&mut rng, 1, 40, 4);
    let t = &data.tasks()[0];
    let th = solve_stl(t, &Loss::Quadratic, &opts()).unwrap();
    let g = mtfuse::empirical_subgradient(&Loss::Quadratic, &th, t).unwrap();
    assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-8);
}

#[test]
fn single_task_regression_matches_grid() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let specs = [
        Loss::check(0.8).unwrap(),
        Loss::newsvendor(3.0, 1.0).unwrap(),
        Loss::HingeRidge { mu: 0.05 },
        Loss::GeneralizedNewsvendor {
            backorder: HalfLineCost::linear(2.0),
            holding: HalfLineCost { breaks: vec![0.5], coeffs: vec![vec![0.0, 0.5], vec![0.125, 0.0, 0.5]] },
        },
    ];
    for spec in specs {
        let data = random_dataset(&mut rng, 1, 15, 2);
        let mut t = data.tasks()[0].clone();
        if spec.is_margin_loss() {
            let s = t.samples().iter().map(|s| Sample::new(s.covariates.clone(), if s.response > 0.5 { 1.0 } else { -1.0 })).collect();
            t = Task::new("l", s).unwrap();
        }
        let th = solve_stl(&t, &spec, &opts()).unwrap();
        let f = |v: &[f64]| empirical_risk(&spec, v, &t).unwrap();
        let (_, best) = brute_force_minimize(f, &[-4.0, -4.0], &[4.0, 4.0], 0.004, DEFAULT_CELL_BUDGET).unwrap();
        assert!(f(&th) <= best + 1e-9, "{spec:?}: {} vs {best}", f(&th));
    }
}

#[test]
fn pooled_examples() {
    let spec = Loss::check(0.5).unwrap();
    let data = Dataset::new(vec![Task::location("a", &[0.0, 0.0]).unwrap(), Task::location("b", &[2.0]).unwrap()]).unwrap();
    let th = solve_dp(&data, &spec, None, &opts()).unwrap();
    let pooled = Task::location("p", &[0.0, 0.0, 2.0]).unwrap();
    assert_eq!(empirical_risk(&spec, &th, &pooled).unwrap(), empirical_risk(&spec, &[0.0], &pooled).unwrap());

    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let one = random_dataset(&mut rng, 1, 20, 3);
    let copies = Dataset::new((0..3).map(|j| {
        Task::new(format!("c{j}"), one.tasks()[0].samples().to_vec()).unwrap()
    }).collect()).unwrap();
    let spec = Loss::Quadratic;
    let a = solve_dp(&copies, &spec, None, &opts()).unwrap();
    let b = solve_stl(&one.tasks()[0], &spec, &opts()).unwrap();
    let c = solve_dp(&one, &spec, None, &opts()).unwrap();
    for k in 0..3 {
        assert!((a[k] - b[k]).abs() < 1e-8 && (c[k] - b[k]).abs() < 1e-8);
    }
}

#[test]
fn never_worse_than_origin() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    for _ in 0..5 {
        let data = random_dataset(&mut rng, 3, 20, 2);
        let spec = Loss::check(0.3).unwrap();
        let cfg = config(vec![1.0; 3], vec![0.2; 3]);
        let fit = solve_fused(&data, &spec, &cfg).unwrap();
        let zero = objective_value(&data, &spec, &cfg.weights, &cfg.lambdas, &vec![vec![0.0; 2]; 3], &[0.0; 2]).unwrap();
        assert!(fit.objective <= zero);
        let recomputed = objective_value(&data, &spec, &cfg.weights, &cfg.lambdas, &fit.theta_hat, &fit.beta_hat).unwrap();
        assert!((recomputed - fit.objective).abs() <= 1e-10 * fit.objective.abs().max(1.0));
    }
}

#[test]
fn weight_scaling_keeps_minimizer() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let data = random_dataset(&mut rng, 3, 20, 2);
    let spec = Loss::Quadratic;
    let base = config(vec![1.0, 2.0, 0.5], vec![0.3, 0.3, 0.3]);
    let scaled = config(vec![3.0, 6.0, 1.5], vec![0.3, 0.3, 0.3]);
    let a = solve_fused(&data, &spec, &base).unwrap();
    let b = solve_fused(&data, &spec, &scaled).unwrap();
    assert!((b.objective - 3.0 * a.objective).abs() < 1e-9 * b.objective);
    for (x, y) in a.theta_hat.iter().zip(&b.theta_hat) {
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() < 1e-7);
        }
    }
}

#[test]
fn agrees_with_reference_solver() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    for _ in 0..6 {
        let m = rng.random_range(2..=3);
        let data = random_dataset(&mut rng, m, 8, 2);
        let spec = Loss::check(rng.random_range(0.2..0.8)).unwrap();
        let cfg = config(vec![1.0; m], vec![rng.random_range(0.05..0.5); m]);
        let fit = solve_fused(&data, &spec, &cfg).unwrap();
        let reference = reference_solve_fused(&data, &spec, &cfg, 40_000).unwrap();
        let gap = (reference.objective - fit.objective) / fit.objective.abs().max(1e-12);
        assert!(gap.abs() <= 1e-4, "gap {gap}");
        assert!(fit.objective <= reference.objective + 1e-12);
    }
}

#[test]
fn zero_weight_task_sits_at_center() {
    let data = Dataset::new(vec![
        Task::location("a", &[0.0, 1.0]).unwrap(),
        Task::location("b", &[2.0, 3.0]).unwrap(),
        Task::location("c", &[100.0]).unwrap(),
    ])
    .unwrap();
    let fit = solve_fused(&data, &Loss::check(0.5).unwrap(), &config(vec![1.0, 1.0, 0.0], vec![0.1; 3])).unwrap();
    assert_eq!(fit.theta_hat[2], fit.beta_hat);
    assert!(fit.beta_hat[0] < 5.0);
}

#[test]
fn iteration_budget_reports_best_iterate() {
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    let data = random_dataset(&mut rng, 4, 30, 3);
    let mut cfg = config(vec![1.0; 4], vec![0.05; 4]);
    cfg.max_outer_iters = 1;
    cfg.balance_step = false;
    match solve_fused(&data, &Loss::check(0.4).unwrap(), &cfg) {
        Err(Error::NotConverged { best: mtfuse::BestIterate::Fused(s), .. }) => assert_eq!(s.theta_hat.len(), 4),
        Ok(s) => assert!(s.diagnostics.converged),
        Err(e) => panic!("unexpected {e:?}"),
    }
}

#[test]
fn invalid_configs_rejected() {
    let data = Dataset::new(vec![Task::location("a", &[0.0]).unwrap()]).unwrap();
    let spec = Loss::check(0.5).unwrap();
    assert!(solve_fused(&data, &spec, &config(vec![-1.0], vec![0.0])).is_err());
    assert!(solve_fused(&data, &spec, &config(vec![1.0, 1.0], vec![0.0, 0.0])).is_err());
    let mut c = config(vec![1.0], vec![0.1]);
    c.admm_step = 0.0;
    assert!(solve_fused(&data, &spec, &c).is_err());
}
