use approx::assert_relative_eq;
use mixedpo::cases;
use mixedpo::matlin::Mat;
use mixedpo::norms::{h2_norm, hinf_bisect, hinf_grid, membership, MembershipReason};
use mixedpo::{Plant, TimeDomain};
use mixedpo_oracles::{gaussian, random_instance, rng};
use proptest::prelude::*;

fn instance(seed: u64, continuous: bool, gamma_scale: f64) -> (Plant, Mat, TimeDomain) {
    let mut r = rng(seed);
    let (data, k) = random_instance(&mut r, 3, 2, 2, continuous);
    let domain = if continuous {
        TimeDomain::Continuous
    } else {
        TimeDomain::Discrete
    };
    let plant = Plant::from_weights(data.a, data.b, data.d, data.q, data.r, 1.0).unwrap();
    let norm = hinf_bisect(&plant, &k, domain, 1e-10).unwrap().value;
    (plant.with_gamma(gamma_scale * norm).unwrap(), k, domain)
}

/// `Σ_t tr(DᵀA_clᵗᵀ W A_clᵗ D)` truncated once the terms are negligible.
fn h2_impulse_discrete(plant: &Plant, k: &Mat) -> f64 {
    let acl = plant.closed_loop(k).unwrap();
    let w = plant.output_weight(k).unwrap();
    let mut g = plant.d.clone();
    let mut total = 0.0;
    for _ in 0..100_000 {
        let term = (g.transpose() * &w * &g).trace();
        total += term;
        if term < 1e-18 * total {
            break;
        }
        g = &acl * g;
    }
    total.sqrt()
}

/// `∫₀^∞ tr(Dᵀe^{A_clᵀt} W e^{A_cl t}D) dt` by composite Simpson on a fine grid.
fn h2_impulse_continuous(plant: &Plant, k: &Mat) -> f64 {
    let acl = plant.closed_loop(k).unwrap();
    let w = plant.output_weight(k).unwrap();
    let h = 1e-3;
    let step = (&acl * h).exp();
    let mut g = plant.d.clone();
    let f = |g: &Mat| (g.transpose() * &w * g).trace();
    let n = 60_000;
    let mut total = f(&g);
    for i in 1..=n {
        g = &step * g;
        let weight = if i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += weight * f(&g);
    }
    (total * h / 3.0).sqrt()
}

#[test]
fn h2_matches_impulse_response() {
    for seed in 0..4 {
        let mut r = rng(seed);
        let a = gaussian(2, 2, &mut r);
        let rho = mixedpo::matlin::spectral_radius(&a).unwrap();
        let a = a * (0.8 / rho);
        let plant = Plant::from_weights(
            a,
            gaussian(2, 1, &mut r),
            gaussian(2, 2, &mut r),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
            10.0,
        )
        .unwrap();
        let k = Mat::zeros(1, 2);
        let v = h2_norm(&plant, &k, TimeDomain::Discrete).unwrap();
        assert_relative_eq!(v, h2_impulse_discrete(&plant, &k), max_relative = 1e-4);

        let a = gaussian(2, 2, &mut r);
        let shift = mixedpo::matlin::max_real_eig(&a).unwrap() + 0.5;
        let a = a - Mat::identity(2, 2) * shift;
        let plant = Plant::from_weights(
            a,
            gaussian(2, 1, &mut r),
            gaussian(2, 2, &mut r),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
            10.0,
        )
        .unwrap();
        let v = h2_norm(&plant, &k, TimeDomain::Continuous).unwrap();
        assert_relative_eq!(v, h2_impulse_continuous(&plant, &k), max_relative = 1e-4);
    }
}

#[test]
fn nonconvexity_witness() {
    let plant = cases::nonconvex_discrete();
    let (k1, k2, k3) = cases::nonconvex_discrete_gains();
    let d = TimeDomain::Discrete;
    assert!(membership(&plant, &k1, d).in_set);
    assert!(membership(&plant, &k2, d).in_set);
    let mid = membership(&plant, &k3, d);
    assert!(!mid.in_set);
    assert_eq!(mid.reason, MembershipReason::HinfViolation);
}

#[test]
fn unstable_gain_is_flagged() {
    let plant = cases::nonconvex_discrete();
    let cert = membership(&plant, &Mat::zeros(3, 3), TimeDomain::Discrete);
    assert!(!cert.in_set && !cert.stabilizing);
    assert_eq!(cert.reason, MembershipReason::Unstable);
    assert!(hinf_bisect(&plant, &Mat::zeros(3, 3), TimeDomain::Discrete, 1e-6).is_err());
}

#[test]
fn bisection_agrees_with_dense_grid() {
    for seed in 0..10 {
        for cont in [false, true] {
            let (plant, k, d) = instance(seed, cont, 1.0);
            let b = hinf_bisect(&plant, &k, d, 1e-9).unwrap().value;
            let g = hinf_grid(&plant, &k, d, 8192).unwrap().value;
            assert!((b - g).abs() <= 1e-3, "seed {seed}: {b} vs {g}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn certificate_soundness(seed in any::<u64>(), cont in any::<bool>(), scale in 0.6f64..1.6) {
        let (plant, k, d) = instance(seed, cont, scale);
        let cert = membership(&plant, &k, d);
        prop_assert_eq!(cert.in_set, cert.stabilizing && cert.riccati.as_ref().is_some_and(|c| c.feasible));
        if cert.in_set {
            prop_assert!(hinf_grid(&plant, &k, d, 2048).unwrap().value < plant.gamma);
        } else if cert.reason == MembershipReason::HinfViolation {
            prop_assert!(hinf_bisect(&plant, &k, d, 1e-6).unwrap().value >= plant.gamma - 1e-6);
        }
    }

    #[test]
    fn norm_scales_with_disturbance(seed in any::<u64>(), cont in any::<bool>()) {
        let (plant, k, d) = instance(seed, cont, 2.0);
        let base = hinf_bisect(&plant, &k, d, 1e-11).unwrap().value;
        for s in [0.5, 2.0] {
            let scaled = Plant::from_weights(plant.a.clone(), plant.b.clone(), &plant.d * s, plant.q.clone(), plant.r.clone(), plant.gamma).unwrap();
            let v = hinf_bisect(&scaled, &k, d, 1e-11).unwrap().value;
            prop_assert!((v - s * base).abs() <= 1e-6 * s * base);
        }
    }

    #[test]
    fn grid_nondecreasing_in_points(seed in any::<u64>(), cont in any::<bool>()) {
        let (plant, k, d) = instance(seed, cont, 2.0);
        let mut last = 0.0;
        for n in [16, 64, 256, 1024, 4096] {
            let v = hinf_grid(&plant, &k, d, n).unwrap().value;
            prop_assert!(v >= last - 1e-12 * (1.0 + last));
            prop_assert!(v >= 0.0);
            last = v;
        }
    }
}
