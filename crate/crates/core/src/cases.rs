//! Benchmark instances with fixed data.
//!
//! Every case is returned with the matrices exactly as tabulated; gains named
//! `k1`/`k2`/`k3` belong to the nonconvexity instances, where `k3` is the
//! midpoint of the other two.

use crate::matlin::Mat;
use crate::plant::{Plant, TimeDomain};

fn m3(rows: [[f64; 3]; 3]) -> Mat {
    Mat::from_fn(3, 3, |i, j| rows[i][j])
}

/// Three-state instance with identity `A`, `B`, `Q`, `R` and `D = 0.1 I`, `γ = 1`.
pub fn nonconvex_discrete() -> Plant {
    let i = Mat::identity(3, 3);
    Plant::from_weights(i.clone(), i.clone(), &i * 0.1, i.clone(), i, 1.0)
        .expect("static case data")
}

pub fn nonconvex_discrete_gains() -> (Mat, Mat, Mat) {
    let k1 = m3([[1.0, 0.0, -1.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    let k2 = m3([[1.0, -2.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]);
    let k3 = (&k1 + &k2) * 0.5;
    (k1, k2, k3)
}

/// Same plant data as [`nonconvex_discrete`], read in continuous time.
pub fn nonconvex_continuous() -> Plant {
    nonconvex_discrete()
}

pub fn nonconvex_continuous_gains() -> (Mat, Mat, Mat) {
    let k1 = m3([[2.0, 0.0, -1.0], [-1.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
    let k2 = m3([[2.0, -2.0, 0.0], [0.0, 2.0, 0.0], [-1.0, 0.0, 2.0]]);
    let k3 = (&k1 + &k2) * 0.5;
    (k1, k2, k3)
}

/// Scalar instance `A = 2.75`, `B = 2`, `C² = 1`, `R = 1`, `D² = 0.01`, `γ = 0.2101`.
pub fn nocoercivity_1d() -> Plant {
    let s = |v: f64| Mat::from_element(1, 1, v);
    Plant::from_weights(s(2.75), s(2.0), s(0.1), s(1.0), s(1.0), 0.2101).expect("static case data")
}

/// Gain of the scalar instance at which the cost is examined.
pub const NOCOERCIVITY_GAIN: f64 = 1.2573;

pub fn case1_a() -> Mat {
    m3([[1.0, 0.0, -10.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
}

pub fn case1_b() -> Mat {
    m3([[1.0, -10.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
}

/// Case 1 plant. `γ` is derived from a random initial gain in experiments,
/// so the supplied value is only a placeholder until it is set.
pub fn case1(gamma: f64) -> Plant {
    let q = m3([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]);
    let r = m3([[5.0, -3.0, 0.0], [-3.0, 5.0, -2.0], [0.0, -2.0, 5.0]]);
    Plant::from_weights(case1_a(), case1_b(), Mat::identity(3, 3), q, r, gamma)
        .expect("static case data")
}

/// Two-state instance with a degenerate second channel, `γ = 10`.
pub fn case2() -> Plant {
    let a = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
    let b = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let c = Mat::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
    let e = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    Plant::new(a, b.clone(), c, b, e, 10.0).expect("static case data")
}

/// Continuous-time instance sharing `A`, `B` with Case 1, `D = 0.5 I`, `R = I`.
pub fn case3(gamma: f64) -> Plant {
    let c = Mat::from_row_slice(4, 3, &[0., 0., 0., 0., 0., 0., 0., 0., 0., 1., 0., 2.]);
    let e = Mat::from_row_slice(4, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0.]);
    Plant::new(case1_a(), case1_b(), c, Mat::identity(3, 3) * 0.5, e, gamma)
        .expect("static case data")
}

/// Names accepted by [`by_name`], with their time domain.
pub const CASE_NAMES: [(&str, TimeDomain); 6] = [
    ("case1", TimeDomain::Discrete),
    ("case2", TimeDomain::Discrete),
    ("case3", TimeDomain::Continuous),
    ("nonconvex_discrete", TimeDomain::Discrete),
    ("nonconvex_continuous", TimeDomain::Continuous),
    ("nocoercivity_1d", TimeDomain::Discrete),
];

/// Looks up a built-in case by name with its default `γ`.
pub fn by_name(name: &str) -> Option<(Plant, TimeDomain)> {
    let plant = match name {
        "case1" => case1(1.0),
        "case2" => case2(),
        "case3" => case3(5.0),
        "nonconvex_discrete" => nonconvex_discrete(),
        "nonconvex_continuous" => nonconvex_continuous(),
        "nocoercivity_1d" => nocoercivity_1d(),
        _ => return None,
    };
    let domain = CASE_NAMES.iter().find(|(n, _)| *n == name)?.1;
    Some((plant, domain))
}
