use mtfuse::piecewise::HalfLineCost;
use mtfuse::{
    check_loss, empirical_risk, empirical_subgradient, loss_subgradient, loss_value, tau_from_costs, Loss, Sample, Task,
};
use proptest::prelude::*;

fn task(rows: &[(Vec<f64>, f64)]) -> Task {
    Task::new("t", rows.iter().map(|(x, y)| Sample::new(x.clone(), *y)).collect()).unwrap()
}

#[test]
fn check_loss_values() {
    assert_eq!(check_loss(2.0, 0.5).unwrap(), 1.0);
    assert!((check_loss(-1.0f64, 0.9).unwrap() - 0.1).abs() < 1e-15);
    assert_eq!(check_loss(0.0, 0.3).unwrap(), 0.0);
    assert!(check_loss(1.0, 1.0).is_err());
    assert!(check_loss(1.0, 0.0).is_err());
}

#[test]
fn tau_from_cost_pairs() {
    assert_eq!(tau_from_costs(9.0, 1.0).unwrap(), 0.9);
    assert_eq!(tau_from_costs(1.0, 1.0).unwrap(), 0.5);
    assert_eq!(tau_from_costs(0.0, 1.0).unwrap(), 0.0);
    assert!(tau_from_costs(0.0, 0.0).is_err());
}

#[test]
fn loss_value_examples() {
    let nv = Loss::newsvendor(9.0, 1.0).unwrap();
    assert_eq!(loss_value(&nv, &[8.0], &Sample::new(vec![1.0], 10.0)).unwrap(), 18.0);
    let hinge = Loss::HingeRidge { mu: 0.0 };
    // margin y x'theta = 2
    assert_eq!(loss_value(&hinge, &[2.0], &Sample::new(vec![1.0], 1.0)).unwrap(), 0.0);
    let check = Loss::check(0.9).unwrap();
    assert!((loss_value(&check, &[0.0], &Sample::new(vec![1.0], 1.0)).unwrap() - 0.9).abs() < 1e-15);
    assert!(loss_value(&check, &[0.0, 1.0], &Sample::new(vec![1.0], 1.0)).is_err());
}

#[test]
fn hinge_ridge_and_quadratic_values() {
    let hinge = Loss::HingeRidge { mu: 0.5 };
    // 1 - (-1)(1)(0.5) = 1.5, plus 0.5 * 0.25
    let v = loss_value(&hinge, &[0.5], &Sample::new(vec![1.0], -1.0)).unwrap();
    assert!((v - 1.625).abs() < 1e-15);
    let q = Loss::Quadratic;
    assert_eq!(loss_value(&q, &[1.0, 1.0], &Sample::new(vec![1.0, 2.0], 0.0)).unwrap(), 4.5);
}

#[test]
fn subgradient_examples() {
    let check = Loss::check(0.5).unwrap();
    assert_eq!(loss_subgradient(&check, &[0.0], &Sample::new(vec![1.0], 1.0)).unwrap(), vec![-0.5]);
    assert_eq!(loss_subgradient(&check, &[1.0], &Sample::new(vec![1.0], 1.0)).unwrap(), vec![0.0]);
    assert_eq!(loss_subgradient(&Loss::Quadratic, &[0.0], &Sample::new(vec![1.0], 2.0)).unwrap(), vec![-2.0]);
    // margin exactly 1: the hinge contributes nothing
    let hinge = Loss::HingeRidge { mu: 0.25 };
    assert_eq!(loss_subgradient(&hinge, &[1.0], &Sample::new(vec![1.0], 1.0)).unwrap(), vec![0.5]);
}

#[test]
fn empirical_risk_examples() {
    let check = Loss::check(0.5).unwrap();
    let t = Task::location("t", &[-1.0, 1.0]).unwrap();
    assert_eq!(empirical_risk(&check, &[0.0], &t).unwrap(), 0.5);
    let one = task(&[(vec![1.0, 2.0], 3.0)]);
    let nv = Loss::newsvendor(2.0, 3.0).unwrap();
    assert_eq!(
        empirical_risk(&nv, &[0.5, 0.5], &one).unwrap(),
        loss_value(&nv, &[0.5, 0.5], &one.samples()[0]).unwrap()
    );
    let flat = task(&[(vec![1.0], 1.0), (vec![1.0], 1.0), (vec![1.0], 1.0)]);
    assert_eq!(empirical_risk(&Loss::Quadratic, &[1.0], &flat).unwrap(), 0.0);
}

#[test]
fn empirical_subgradient_examples() {
    let check = Loss::check(0.9).unwrap();
    let t = task(&[(vec![1.0, 0.5], 3.0), (vec![1.0, -1.0], 2.0), (vec![1.0, 2.0], 5.0)]);
    let g = empirical_subgradient(&check, &[0.0, 0.0], &t).unwrap();
    // all residuals positive: -(0.9 / 3) sum x
    assert!((g[0] + 0.9).abs() < 1e-15);
    assert!((g[1] + 0.45).abs() < 1e-15);

    let hinge = Loss::HingeRidge { mu: 1.0 };
    let t = task(&[(vec![1.0, 2.0], 1.0), (vec![0.5, -1.0], -1.0)]);
    let g = empirical_subgradient(&hinge, &[0.0, 0.0], &t).unwrap();
    let expect = [-(1.0 - 0.5) / 2.0, -(2.0 + 1.0) / 2.0];
    assert!((g[0] - expect[0]).abs() < 1e-15 && (g[1] - expect[1]).abs() < 1e-15);
}

#[test]
fn generalized_newsvendor_matches_plain_for_linear_costs() {
    let gen = Loss::GeneralizedNewsvendor { backorder: HalfLineCost::linear(4.0), holding: HalfLineCost::linear(1.5) };
    let nv = Loss::newsvendor(4.0, 1.5).unwrap();
    for y in [-2.0, -0.3, 0.0, 0.7, 3.0] {
        let s = Sample::new(vec![1.0], y);
        assert_eq!(loss_value(&gen, &[0.1], &s).unwrap(), loss_value(&nv, &[0.1], &s).unwrap());
    }
}

#[test]
fn generalized_newsvendor_quadratic_holding() {
    // holding cost s^2 on leftovers
    let holding = HalfLineCost { breaks: vec![], coeffs: vec![vec![0.0, 0.0, 1.0]] };
    let gen = Loss::GeneralizedNewsvendor { backorder: HalfLineCost::linear(2.0), holding };
    assert_eq!(loss_value(&gen, &[5.0], &Sample::new(vec![1.0], 2.0)).unwrap(), 9.0);
    assert_eq!(loss_value(&gen, &[1.0], &Sample::new(vec![1.0], 2.0)).unwrap(), 2.0);
}

#[test]
fn invalid_specs_rejected() {
    assert!(Loss::check(1.5).is_err());
    assert!(Loss::newsvendor(-1.0, 1.0).is_err());
    assert!(Loss::HingeRidge { mu: -0.1 }.validate().is_err());
    let concave = HalfLineCost { breaks: vec![1.0], coeffs: vec![vec![0.0, 2.0], vec![1.0, 1.0]] };
    assert!(Loss::GeneralizedNewsvendor { backorder: concave, holding: HalfLineCost::linear(1.0) }.validate().is_err());
}

#[test]
fn empty_task_rejected() {
    assert!(Task::new("empty", vec![]).is_err());
}

fn any_spec() -> impl Strategy<Value = Loss> {
    prop_oneof![
        (0.05f64..0.95).prop_map(|t| Loss::check(t).unwrap()),
        (0.1f64..5.0, 0.1f64..5.0).prop_map(|(b, h)| Loss::newsvendor(b, h).unwrap()),
        (0.0f64..2.0).prop_map(|mu| Loss::HingeRidge { mu }),
        Just(Loss::Quadratic),
        (0.1f64..3.0, 0.1f64..2.0).prop_map(|(b, q)| Loss::GeneralizedNewsvendor {
            backorder: HalfLineCost { breaks: vec![1.0], coeffs: vec![vec![0.0, b], vec![q, b - 2.0 * q, q]] },
            holding: HalfLineCost { breaks: vec![], coeffs: vec![vec![0.0, 0.5, q]] },
        }),
    ]
}

fn any_task(d: usize) -> impl Strategy<Value = Task> {
    prop::collection::vec((prop::collection::vec(-3.0f64..3.0, d), -4.0f64..4.0), 1..12).prop_map(|rows| {
        Task::new("p", rows.into_iter().map(|(x, y)| Sample::new(x, y)).collect()).unwrap()
    })
}

fn label_task(t: &Task) -> Task {
    let samples = t.samples().iter().map(|s| Sample::new(s.covariates.clone(), if s.response < 0.0 { -1.0 } else { 1.0 })).collect();
    Task::new("l", samples).unwrap()
}

proptest! {
    #[test]
    fn risk_is_convex(spec in any_spec(), t in any_task(3), a in prop::collection::vec(-3.0f64..3.0, 3),
                      b in prop::collection::vec(-3.0f64..3.0, 3), s in 0.0f64..1.0) {
        let t = if spec.is_margin_loss() { label_task(&t) } else { t };
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + (1.0 - s) * y).collect();
        let lhs = empirical_risk(&spec, &mid, &t).unwrap();
        let rhs = s * empirical_risk(&spec, &a, &t).unwrap() + (1.0 - s) * empirical_risk(&spec, &b, &t).unwrap();
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn subgradient_inequality(spec in any_spec(), t in any_task(3), a in prop::collection::vec(-3.0f64..3.0, 3),
                              b in prop::collection::vec(-3.0f64..3.0, 3)) {
        let t = if spec.is_margin_loss() { label_task(&t) } else { t };
        let g = empirical_subgradient(&spec, &a, &t).unwrap();
        let lin: f64 = g.iter().zip(a.iter().zip(&b)).map(|(gi, (x, y))| gi * (y - x)).sum();
        let fa = empirical_risk(&spec, &a, &t).unwrap();
        let fb = empirical_risk(&spec, &b, &t).unwrap();
        prop_assert!(fb >= fa + lin - 1e-12 * (1.0 + fa.abs() + fb.abs()));
    }

    #[test]
    fn subgradient_at_kink_is_valid(tau in 0.05f64..0.95, x in prop::collection::vec(-2.0f64..2.0, 2),
                                    theta in prop::collection::vec(-2.0f64..2.0, 2), probe in prop::collection::vec(-2.0f64..2.0, 2)) {
        // response chosen so the residual is exactly zero
        let y = x[0] * theta[0] + x[1] * theta[1];
        let t = Task::new("k", vec![Sample::new(x, y)]).unwrap();
        let spec = Loss::check(tau).unwrap();
        let g = empirical_subgradient(&spec, &theta, &t).unwrap();
        let lin: f64 = g.iter().zip(theta.iter().zip(&probe)).map(|(gi, (a, b))| gi * (b - a)).sum();
        let fa = empirical_risk(&spec, &theta, &t).unwrap();
        prop_assert!(empirical_risk(&spec, &probe, &t).unwrap() >= fa + lin - 1e-12);
    }

    #[test]
    fn newsvendor_is_scaled_check(b in 0.1f64..10.0, h in 0.1f64..10.0, t in any_task(2),
                                  theta in prop::collection::vec(-3.0f64..3.0, 2)) {
        let nv = empirical_risk(&Loss::newsvendor(b, h).unwrap(), &theta, &t).unwrap();
        let ck = empirical_risk(&Loss::check(tau_from_costs(b, h).unwrap()).unwrap(), &theta, &t).unwrap();
        prop_assert!((nv - (b + h) * ck).abs() <= 1e-12 * (1.0 + nv.abs()));
    }

    #[test]
    fn quadratic_gradient_matches_differences(t in any_task(3), theta in prop::collection::vec(-3.0f64..3.0, 3)) {
        let g = empirical_subgradient(&Loss::Quadratic, &theta, &t).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (empirical_risk(&Loss::Quadratic, &up, &t).unwrap() - empirical_risk(&Loss::Quadratic, &dn, &t).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "{} vs {}", fd, g[k]);
        }
    }
}
