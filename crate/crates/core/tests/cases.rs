use mixedpo::cases::{self, by_name, CASE_NAMES};
use mixedpo::matlin::Mat;
use mixedpo::TimeDomain;

fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
    Mat::from_row_slice(rows, cols, v)
}

const A13: [f64; 9] = [1., 0., -10., -1., 1., 0., 0., 0., 1.];
const B13: [f64; 9] = [1., -10., 0., 0., 1., 0., -1., 0., 1.];

#[test]
fn case1_data() {
    let p = cases::case1(15.45);
    assert_eq!(p.a, m(3, 3, &A13));
    assert_eq!(p.b, m(3, 3, &B13));
    assert_eq!(p.q, m(3, 3, &[2., -1., 0., -1., 2., -1., 0., -1., 2.]));
    assert_eq!(p.r, m(3, 3, &[5., -3., 0., -3., 5., -2., 0., -2., 5.]));
    assert_eq!(&p.d * p.d.transpose(), Mat::identity(3, 3));
    assert_eq!(p.gamma, 15.45);
}

#[test]
fn case2_data() {
    let p = cases::case2();
    let c = m(3, 2, &[0., 0., 0., 0., 1., 2.]);
    let e = m(3, 2, &[1., 0., 0., 1., 0., 0.]);
    assert_eq!(p.a, m(2, 2, &[2., 0., 0., 0.]));
    assert_eq!(p.b, m(2, 2, &[1., 0., 0., 0.]));
    assert_eq!(p.d, p.b);
    assert_eq!(p.q, c.transpose() * &c);
    assert_eq!(p.r, e.transpose() * &e);
    assert_eq!(p.gamma, 10.0);
}

#[test]
fn case3_data() {
    let p = cases::case3(5.0);
    let c = m(4, 3, &[0., 0., 0., 0., 0., 0., 0., 0., 0., 1., 0., 2.]);
    assert_eq!(p.a, m(3, 3, &A13));
    assert_eq!(p.b, m(3, 3, &B13));
    assert_eq!(p.d, Mat::identity(3, 3) * 0.5);
    assert_eq!(p.q, c.transpose() * &c);
    assert_eq!(p.r, Mat::identity(3, 3));
}

#[test]
fn counterexample_data() {
    let p = cases::nonconvex_discrete();
    assert_eq!(p.a, Mat::identity(3, 3));
    assert_eq!(p.b, Mat::identity(3, 3));
    assert_eq!(p.d, Mat::identity(3, 3) * 0.1);
    assert_eq!(p.gamma, 1.0);
    let (k1, k2, k3) = cases::nonconvex_discrete_gains();
    assert_eq!(k1, m(3, 3, &[1., 0., -1., -1., 1., 0., 0., 0., 1.]));
    assert_eq!(k2, m(3, 3, &[1., -2., 0., 0., 1., 0., -1., 0., 1.]));
    assert_eq!(k3, (k1 + k2) * 0.5);
    let (c1, c2, _) = cases::nonconvex_continuous_gains();
    assert_eq!(c1, m(3, 3, &[2., 0., -1., -1., 2., 0., 0., 0., 2.]));
    assert_eq!(c2, m(3, 3, &[2., -2., 0., 0., 2., 0., -1., 0., 2.]));

    let s = cases::nocoercivity_1d();
    assert_eq!(
        (s.a[(0, 0)], s.b[(0, 0)], s.q[(0, 0)], s.r[(0, 0)]),
        (2.75, 2.0, 1.0, 1.0)
    );
    assert!((s.d[(0, 0)].powi(2) - 0.01).abs() < 1e-16);
    assert_eq!(s.gamma, 0.2101);
}

#[test]
fn lookup_by_name() {
    for (name, domain) in CASE_NAMES {
        let (_, d) = by_name(name).unwrap();
        assert_eq!(d, domain);
    }
    assert_eq!(by_name("case3").unwrap().1, TimeDomain::Continuous);
    assert!(by_name("case4").is_none());
}
