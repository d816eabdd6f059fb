use mixedpo::cases;
use mixedpo::lqgame::{
    best_response_l, closed_form_gains, game_feasible, game_value, gare_residual, grad_k, grad_l,
    solve_gare, GameSpec,
};
use mixedpo::matlin::Mat;
use mixedpo::norms::hinf_bisect;
use mixedpo::polgrad::find_feasible_init;
use mixedpo::riccati::{solve_dare_policy, solve_optimal_modified_riccati, DISCRETE_MAX_ITER};
use mixedpo::zeroth::simulate;
use mixedpo::{Plant, TimeDomain};
use mixedpo_oracles::{gaussian, random_instance, rng};
use proptest::prelude::*;

fn mixed_instance(seed: u64, slack: f64) -> Plant {
    let (data, _) = random_instance(&mut rng(seed), 3, 2, 2, false);
    let plant = Plant::from_weights(data.a, data.b, data.d, data.q, data.r, 1.0).unwrap();
    let (_, k) =
        solve_optimal_modified_riccati(&plant.with_gamma(1e6).unwrap(), 1e-13, DISCRETE_MAX_ITER)
            .unwrap();
    let norm = hinf_bisect(&plant, &k, TimeDomain::Discrete, 1e-10)
        .unwrap()
        .value;
    plant.with_gamma(slack * norm).unwrap()
}

#[test]
fn scalar_value() {
    let s = |v: f64| Mat::from_element(1, 1, v);
    let spec = GameSpec::new(s(0.5), s(1.0), s(1.0), s(1.0), s(1.0), s(1.0), s(1.0)).unwrap();
    let (p, v) = game_value(&spec, &s(0.5), &s(0.0)).unwrap();
    assert!((p[(0, 0)] - 1.25).abs() < 1e-14 && (v - 1.25).abs() < 1e-14);
}

#[test]
fn value_equation_residual() {
    for seed in 0..5 {
        let plant = mixed_instance(seed, 2.0);
        let spec = GameSpec::from_plant(&plant);
        let (_, k) = solve_optimal_modified_riccati(&plant, 1e-13, DISCRETE_MAX_ITER).unwrap();
        let l = gaussian(2, 3, &mut rng(seed)) * 1e-2;
        let (p, _) = game_value(&spec, &k, &l).unwrap();
        let acl = spec.closed_loop(&k, &l).unwrap();
        let res = spec.stage_weight(&k, &l).unwrap() + acl.transpose() * &p * &acl - &p;
        assert!(res.norm() <= 1e-10 * (1.0 + p.norm()));
    }
}

#[test]
fn best_response_value_is_policy_riccati_solution() {
    for seed in 0..5 {
        let plant = mixed_instance(seed, 1.5);
        let spec = GameSpec::from_plant(&plant);
        let (_, k) = solve_optimal_modified_riccati(&plant, 1e-13, DISCRETE_MAX_ITER).unwrap();
        let (_, p) = best_response_l(&spec, &k).unwrap();
        let policy = solve_dare_policy(&plant, &k, 1e-13, DISCRETE_MAX_ITER)
            .unwrap()
            .p;
        assert!((p - &policy).norm() <= 1e-9 * (1.0 + policy.norm()));
    }
}

#[test]
fn best_response_is_local_max() {
    let plant = mixed_instance(7, 1.5);
    let spec = GameSpec::from_plant(&plant);
    let (_, k) = solve_optimal_modified_riccati(&plant, 1e-13, DISCRETE_MAX_ITER).unwrap();
    let (l, _) = best_response_l(&spec, &k).unwrap();
    let v = game_value(&spec, &k, &l).unwrap().1;
    let mut r = rng(77);
    for _ in 0..10 {
        let lp = &l + gaussian(2, 3, &mut r) * 1e-2;
        if let Ok((_, vp)) = game_value(&spec, &k, &lp) {
            assert!(vp <= v + 1e-8);
        }
    }
    assert!(grad_l(&spec, &k, &l).unwrap().norm() <= 1e-8);
}

#[test]
fn case1_equivalence_and_fixed_point() {
    let (_, gamma) = find_feasible_init(
        &cases::case1(1.0),
        TimeDomain::Discrete,
        0.25,
        Some(1e-5),
        1_000_000,
        5,
    )
    .unwrap();
    let plant = cases::case1(gamma);
    let spec = GameSpec::from_plant(&plant);
    let nash = solve_gare(&spec, 1e-13, DISCRETE_MAX_ITER).unwrap();
    assert!(nash.value_matrix_certified);
    let (_, k_mixed) = solve_optimal_modified_riccati(&plant, 1e-13, DISCRETE_MAX_ITER).unwrap();
    assert!((&nash.k_star - k_mixed).amax() <= 1e-6);
    let (l, _) = best_response_l(&spec, &nash.k_star).unwrap();
    assert!((l - &nash.l_star).amax() <= 1e-8);
}

#[test]
fn nash_gains_have_closed_form() {
    let spec = GameSpec::from_plant(&mixed_instance(3, 1.3));
    let nash = solve_gare(&spec, 1e-13, DISCRETE_MAX_ITER).unwrap();
    let (k, l) = closed_form_gains(&spec, &nash.p_star).unwrap();
    assert!((k - &nash.k_star).amax() <= 1e-8);
    assert!((l - &nash.l_star).amax() <= 1e-8);
    assert!(gare_residual(&spec, &nash.p_star).unwrap() <= 1e-9 * (1.0 + nash.p_star.norm()));
    assert!(grad_k(&spec, &nash.k_star, &nash.l_star).unwrap().norm() <= 1e-8);
}

#[test]
fn nash_value_matches_long_rollouts() {
    let spec = GameSpec::from_plant(&mixed_instance(4, 1.5));
    let nash = solve_gare(&spec, 1e-13, DISCRETE_MAX_ITER).unwrap();
    for seed in 0..5 {
        let roll = simulate(
            &spec,
            &nash.k_star,
            &nash.l_star,
            2000,
            &Mat::identity(3, 3),
            seed,
        )
        .unwrap();
        let x0 = &roll.states[0];
        let expected = (x0.transpose() * &nash.p_star * x0)[(0, 0)];
        assert!((roll.total_cost() - expected).abs() <= 1e-8 * (1.0 + expected.abs()));
    }
}

#[test]
fn infeasible_gain_detected() {
    let plant = mixed_instance(2, 1.01);
    let spec = GameSpec::from_plant(&plant);
    assert!(!game_feasible(&spec, &Mat::zeros(2, 3).add_scalar(50.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn equivalence_with_mixed_design(seed in any::<u64>(), slack in 1.05f64..3.0) {
        let plant = mixed_instance(seed, slack);
        let nash = solve_gare(&GameSpec::from_plant(&plant), 1e-13, DISCRETE_MAX_ITER).unwrap();
        let (_, k) = solve_optimal_modified_riccati(&plant, 1e-13, DISCRETE_MAX_ITER).unwrap();
        prop_assert!((nash.k_star - k).amax() <= 1e-6);
    }

    #[test]
    fn saddle_inequalities(seed in any::<u64>()) {
        let spec = GameSpec::from_plant(&mixed_instance(seed, 1.3));
        let nash = solve_gare(&spec, 1e-13, DISCRETE_MAX_ITER).unwrap();
        let v = game_value(&spec, &nash.k_star, &nash.l_star).unwrap().1;
        let mut r = rng(seed ^ 0x5EED);
        for _ in 0..10 {
            let l = &nash.l_star + gaussian(2, 3, &mut r) * 1e-2;
            if let Ok((_, vl)) = game_value(&spec, &nash.k_star, &l) {
                prop_assert!(vl <= v + 1e-8);
            }
            let k = &nash.k_star + gaussian(2, 3, &mut r) * 1e-2;
            if let Ok((_, vk)) = game_value(&spec, &k, &nash.l_star) {
                prop_assert!(vk >= v - 1e-8);
            }
        }
    }
}
