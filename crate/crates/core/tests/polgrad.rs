use approx::assert_relative_eq;
use mixedpo::cases;
use mixedpo::matlin::{solve_clyap, solve_dlyap, Mat};
use mixedpo::norms::{hinf_bisect, membership};
use mixedpo::polgrad::{
    cost, find_feasible_init, gradient_bundle, monotonicity_defect, run_optimizer, step,
    theorem_stepsize, CostForm, OptimizerConfig, Stepsize, Termination, UpdateKind,
};
use mixedpo::riccati::{solve_optimal_modified_riccati, DISCRETE_MAX_ITER};
use mixedpo::{Plant, TimeDomain};
use mixedpo_oracles::{jacobi_eigenvalues, oracle_dare_policy, random_instance, rng, Lq};
use proptest::prelude::*;

fn instance(seed: u64, continuous: bool, slack: f64) -> (Plant, Mat, TimeDomain) {
    let (data, k) = random_instance(&mut rng(seed), 3, 3, 3, continuous);
    let domain = if continuous {
        TimeDomain::Continuous
    } else {
        TimeDomain::Discrete
    };
    let plant = Plant::from_weights(data.a, data.b, data.d, data.q, data.r, 1.0).unwrap();
    let norm = hinf_bisect(&plant, &k, domain, 1e-10).unwrap().value;
    (plant.with_gamma(slack * norm).unwrap(), k, domain)
}

#[test]
fn log_det_cost_matches_eigenvalue_sum() {
    for seed in 0..5 {
        let (plant, k, d) = instance(seed, false, 1.3);
        let lq = Lq {
            a: plant.a.clone(),
            b: plant.b.clone(),
            d: plant.d.clone(),
            q: plant.q.clone(),
            r: plant.r.clone(),
            gamma: plant.gamma,
        };
        let p = oracle_dare_policy(&lq, &k).unwrap();
        let g2 = plant.gamma * plant.gamma;
        let expected: f64 = jacobi_eigenvalues(&(plant.d.transpose() * &p * &plant.d))
            .iter()
            .map(|l| -g2 * (1.0 - l / g2).ln())
            .sum();
        assert_relative_eq!(
            cost(&plant, &k, CostForm::J2LogDet, d).unwrap(),
            expected,
            max_relative = 1e-9
        );
    }
}

#[test]
fn cost_forms_are_ordered() {
    // log(1−x) ≤ −x and x/(1−x) ≥ x give J1 ≤ J2 ≤ J3.
    for seed in 0..5 {
        let (plant, k, d) = instance(seed, false, 1.2);
        let j1 = cost(&plant, &k, CostForm::J1Trace, d).unwrap();
        let j2 = cost(&plant, &k, CostForm::J2LogDet, d).unwrap();
        let j3 = cost(&plant, &k, CostForm::J3TraceInv, d).unwrap();
        assert!(j1 <= j2 + 1e-12 && j2 <= j3 + 1e-12);
    }
}

#[test]
fn gradient_structure() {
    for seed in 0..5 {
        for cont in [false, true] {
            let (plant, k, d) = instance(seed, cont, 1.4);
            let b = gradient_bundle(&plant, &k, d).unwrap();
            assert!((&b.grad - &b.e_k * &b.weight * 2.0).norm() <= 1e-12 * (1.0 + b.grad.norm()));
            let acl = plant.closed_loop(&k).unwrap();
            if cont {
                let e = &plant.r * &k - plant.b.transpose() * &b.certificate.p;
                assert!((&b.e_k - e).norm() <= 1e-12 * (1.0 + b.e_k.norm()));
                let abar = &acl + plant.dd() * &b.certificate.p / (plant.gamma * plant.gamma);
                let lambda = solve_clyap(&abar.transpose(), &plant.dd()).unwrap();
                assert!((&b.weight - lambda).norm() <= 1e-9 * (1.0 + b.weight.norm()));
            } else {
                let g2 = plant.gamma * plant.gamma;
                let p = &b.certificate.p;
                let shrink = Mat::identity(3, 3) - plant.dd() * p / g2;
                let abar = shrink.clone().try_inverse().unwrap() * &acl;
                let inner = (Mat::identity(3, 3) - plant.d.transpose() * p * &plant.d / g2)
                    .try_inverse()
                    .unwrap();
                let delta =
                    solve_dlyap(&abar.transpose(), &(&plant.d * inner * plant.d.transpose()))
                        .unwrap();
                assert!((&b.weight - delta).norm() <= 1e-9 * (1.0 + b.weight.norm()));
            }
        }
    }
}

#[test]
fn theorem_stepsize_only_for_natural_updates() {
    let (plant, k, d) = instance(1, false, 1.5);
    let cert = gradient_bundle(&plant, &k, d).unwrap().certificate;
    assert!(theorem_stepsize(&plant, &cert, UpdateKind::PolicyGradient, d).is_err());
    assert_eq!(
        theorem_stepsize(&plant, &cert, UpdateKind::GaussNewton, d).unwrap(),
        0.5
    );
    assert!(theorem_stepsize(&plant, &cert, UpdateKind::NaturalGradient, d).unwrap() > 0.0);
}

#[test]
fn case1_gauss_newton_converges_fast() {
    let (k0, gamma) = find_feasible_init(
        &cases::case1(1.0),
        TimeDomain::Discrete,
        0.25,
        Some(1e-5),
        1_000_000,
        3,
    )
    .unwrap();
    let plant = cases::case1(gamma);
    assert!(membership(&plant, &k0, TimeDomain::Discrete).in_set);
    let mut cfg = OptimizerConfig::new(UpdateKind::GaussNewton, Stepsize::Fixed(0.5));
    cfg.max_iter = 30;
    let trace = run_optimizer(&plant, &k0, &cfg, TimeDomain::Discrete).unwrap();
    assert!(trace.converged());
    let (_, k_star) = solve_optimal_modified_riccati(&plant, 1e-13, DISCRETE_MAX_ITER).unwrap();
    assert!((trace.final_k().unwrap() - k_star).amax() <= 1e-6);
}

#[test]
fn case3_init_found() {
    let plant = cases::case3(5.0);
    let (k0, gamma) =
        find_feasible_init(&plant, TimeDomain::Continuous, 1.0, None, 10_000, 0).unwrap();
    assert_eq!(gamma, 5.0);
    assert!(membership(&plant, &k0, TimeDomain::Continuous).in_set);
}

#[test]
fn search_failure_is_reported() {
    let plant = cases::case2();
    assert!(find_feasible_init(&plant, TimeDomain::Discrete, 0.25, None, 50, 0).is_err());
}

#[test]
fn infeasible_start_rejected() {
    let plant = cases::nonconvex_discrete();
    let (_, _, mid) = cases::nonconvex_discrete_gains();
    let cfg = OptimizerConfig::new(UpdateKind::GaussNewton, Stepsize::Theorem);
    assert!(run_optimizer(&plant, &mid, &cfg, TimeDomain::Discrete).is_err());
}

#[test]
fn zero_iterations_is_not_run() {
    let (plant, k, d) = instance(2, false, 1.5);
    let mut cfg = OptimizerConfig::new(UpdateKind::NaturalGradient, Stepsize::Theorem);
    cfg.max_iter = 0;
    let trace = run_optimizer(&plant, &k, &cfg, d).unwrap();
    assert_eq!(trace.termination, Termination::NotRun);
    assert!(trace.records.is_empty());
}

#[test]
fn large_fixed_step_reports_violation() {
    let (plant, k, d) = instance(5, false, 1.05);
    let mut cfg = OptimizerConfig::new(UpdateKind::PolicyGradient, Stepsize::Fixed(1e6));
    cfg.max_iter = 5;
    let trace = run_optimizer(&plant, &k, &cfg, d).unwrap();
    assert!(matches!(
        trace.termination,
        Termination::FeasibilityViolation { iteration: 1 }
    ));
    assert_eq!(trace.records.len(), 1);
}

/// Case 2: descending only along the policy gradient stalls where the first
/// column of `E_K` vanishes, because `Δ_K` is supported on the first state.
/// The natural and Gauss-Newton updates leave such points.
#[test]
fn spurious_stationary_points_are_escaped() {
    let plant = cases::case2();
    let d = TimeDomain::Discrete;
    let k0 = Mat::from_row_slice(2, 2, &[1.8, 0.4, 0.3, -0.5]);
    let mut pg = OptimizerConfig::new(UpdateKind::PolicyGradient, Stepsize::Fixed(1e-2));
    pg.tol = 1e-24;
    pg.max_iter = 50_000;
    let trace = run_optimizer(&plant, &k0, &pg, d).unwrap();
    let stalled = trace.last().unwrap();
    assert!(stalled.policy_grad_norm_sq <= 1e-20);
    assert!(stalled.grad_norm_sq > 1e-2);

    for (kind, eta) in [
        (UpdateKind::NaturalGradient, 1e-2),
        (UpdateKind::GaussNewton, 0.5),
    ] {
        let mut cfg = OptimizerConfig::new(kind, Stepsize::Fixed(eta));
        cfg.tol = 1e-20;
        cfg.max_iter = 20_000;
        let t = run_optimizer(&plant, &stalled.k, &cfg, d).unwrap();
        assert!(t.converged());
        assert!(t.last().unwrap().grad_norm_sq <= 1e-20);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn natural_step_decreases_value(seed in any::<u64>(), cont in any::<bool>()) {
        let (plant, k, d) = instance(seed, cont, 1.1);
        for kind in [UpdateKind::NaturalGradient, UpdateKind::GaussNewton] {
            let cfg = OptimizerConfig::new(kind, Stepsize::Theorem);
            let next = step(&plant, &k, &cfg, d).unwrap();
            prop_assert!(next.feasible);
            let before = gradient_bundle(&plant, &k, d).unwrap().certificate;
            let after = gradient_bundle(&plant, &next.k_next, d).unwrap().certificate;
            prop_assert!(monotonicity_defect(&before.p, &after.p) <= 1e-10);
            let form = CostForm::J1Trace;
            prop_assert!(cost(&plant, &next.k_next, form, d).unwrap() <= cost(&plant, &k, form, d).unwrap() + 1e-10);
        }
    }

    #[test]
    fn theorem_runs_stay_feasible(seed in any::<u64>(), cont in any::<bool>()) {
        let (plant, k, d) = instance(seed, cont, 1.01);
        let mut cfg = OptimizerConfig::new(UpdateKind::NaturalGradient, Stepsize::Theorem);
        cfg.max_iter = 200;
        let trace = run_optimizer(&plant, &k, &cfg, d).unwrap();
        let violated = matches!(trace.termination, Termination::FeasibilityViolation { .. });
        prop_assert!(!violated);
        for r in &trace.records {
            prop_assert!(r.brl_margin > 0.0);
        }
    }
}
