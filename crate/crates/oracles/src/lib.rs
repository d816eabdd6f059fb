//! Reference computations for testing `mixedpo`.
//!
//! Everything here is written from the defining equations with plain dense
//! linear algebra and does not depend on the library under test, so
//! agreement between the two is a genuine cross-check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = DMatrix<f64>;

/// Plant data `(A, B, D, Q, R, γ)` for the policy Riccati oracles.
#[derive(Debug, Clone)]
pub struct Lq {
    pub a: Mat,
    pub b: Mat,
    pub d: Mat,
    pub q: Mat,
    pub r: Mat,
    pub gamma: f64,
}

impl Lq {
    pub fn dd(&self) -> Mat {
        &self.d * self.d.transpose()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        // Box–Muller keeps the oracle free of the library's sampling code.
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

/// Spectral radius from Gelfand's formula `lim ‖Aᵏ‖^{1/k}`, evaluated by
/// repeated normalized squaring up to `k = 2⁴⁰`.
pub fn gelfand_radius(a: &Mat) -> f64 {
    let mut m = a.clone();
    let mut log_scale = 0.0;
    let squarings = 40;
    for _ in 0..squarings {
        let n = m.norm();
        if n == 0.0 {
            return 0.0;
        }
        m /= n;
        log_scale = 2.0 * (log_scale + n.ln());
        m = &m * &m;
    }
    let k = 2f64.powi(squarings);
    ((log_scale + m.norm().ln()) / k).exp()
}

/// Solves `AᵀXA − X + Q = 0` through an explicitly indexed Kronecker system
/// and a full-pivoting LU factorization.
pub fn kron_dlyap(a: &Mat, q: &Mat) -> Mat {
    let n = a.nrows();
    let mut big = Mat::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for l in 0..n {
                for k in 0..n {
                    let col = k + l * n;
                    let mut v = -a[(k, i)] * a[(l, j)];
                    if row == col {
                        v += 1.0;
                    }
                    big[(row, col)] = v;
                }
            }
        }
    }
    let rhs = DVector::from_fn(n * n, |idx, _| q[(idx % n, idx / n)]);
    let x = big
        .full_piv_lu()
        .solve(&rhs)
        .expect("oracle system singular");
    Mat::from_fn(n, n, |i, j| x[i + j * n])
}

/// Solves `AᵀX + XA + Q = 0` the same way.
pub fn kron_clyap(a: &Mat, q: &Mat) -> Mat {
    let n = a.nrows();
    let mut big = Mat::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for k in 0..n {
                big[(row, k + j * n)] += a[(k, i)];
                big[(row, i + k * n)] += a[(k, j)];
            }
        }
    }
    let rhs = DVector::from_fn(n * n, |idx, _| -q[(idx % n, idx / n)]);
    let x = big
        .full_piv_lu()
        .solve(&rhs)
        .expect("oracle system singular");
    Mat::from_fn(n, n, |i, j| x[i + j * n])
}

/// Symmetric eigenvalues by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(s: &Mat) -> Vec<f64> {
    let n = s.nrows();
    let mut a = (s + s.transpose()) * 0.5;
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s_ = t * c;
                let mut rot = Mat::identity(n, n);
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = s_;
                rot[(q, p)] = -s_;
                a = rot.transpose() * &a * &rot;
            }
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    v.sort_by(|x, y| x.total_cmp(y));
    v
}

/// Discrete policy Riccati solution by the plain recursion written out
/// independently, with `P̃ = (I − γ⁻²PDDᵀ)⁻¹P`.
pub fn oracle_dare_policy(plant: &Lq, k: &Mat) -> Option<Mat> {
    let m = plant.a.nrows();
    let acl = &plant.a - &plant.b * k;
    let w = &plant.q + k.transpose() * &plant.r * k;
    let dd = &plant.d * plant.d.transpose() / (plant.gamma * plant.gamma);
    let mut p = Mat::zeros(m, m);
    for _ in 0..2_000_000 {
        let pt = (Mat::identity(m, m) - &p * &dd).try_inverse()? * &p;
        let next = &w + acl.transpose() * pt * &acl;
        let next = (&next + next.transpose()) * 0.5;
        if !next.norm().is_finite() || next.norm() > 1e12 {
            return None;
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= 1e-15 * (1.0 + p.norm()) {
            return Some(p);
        }
    }
    None
}

/// `−γ² Σ log(1 − γ⁻²λᵢ)` over the eigenvalues of `DᵀPD`.
pub fn oracle_j2(plant: &Lq, p: &Mat) -> f64 {
    let g2 = plant.gamma * plant.gamma;
    jacobi_eigenvalues(&(plant.d.transpose() * p * &plant.d))
        .iter()
        .map(|l| -g2 * (1.0 - l / g2).ln())
        .sum()
}

/// LQR gain from value iteration on the standard DARE.
pub fn oracle_lqr(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Mat {
    let mut p = q.clone();
    for _ in 0..1_000_000 {
        let btp = b.transpose() * &p;
        let gain = (r + &btp * b).try_inverse().unwrap() * (&btp * a);
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &p).norm();
        p = next;
        if change <= 1e-14 * (1.0 + p.norm()) {
            break;
        }
    }
    let btp = b.transpose() * &p;
    (r + &btp * b).try_inverse().unwrap() * (btp * a)
}

/// Random `m`-state plant with `d` inputs and `n` disturbances, and a gain
/// whose closed loop has spectral radius below 0.9 (discrete) or is shifted
/// to be Hurwitz with margin (continuous). `γ` is left at 1.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    m: usize,
    d: usize,
    n: usize,
    continuous: bool,
) -> (Lq, Mat) {
    loop {
        let a = gaussian(m, m, rng) * 0.6;
        let b = gaussian(m, d, rng);
        let dm = gaussian(m, n, rng) * 0.5;
        let c = gaussian(m, m, rng) * 0.7;
        let e = gaussian(d, d, rng) * 0.5 + Mat::identity(d, d);
        let k = gaussian(d, m, rng) * 0.3;
        let q = c.transpose() * &c;
        let r = e.transpose() * &e + Mat::identity(d, d) * 0.1;
        let acl = &a - &b * &k;
        let ok = if continuous {
            true
        } else {
            gelfand_radius(&acl) < 0.9
        };
        if !ok {
            continue;
        }
        let a = if continuous {
            // Shift so that the closed loop is comfortably Hurwitz.
            let shift = acl.norm() + 0.5;
            a - Mat::identity(m, m) * shift
        } else {
            a
        };
        let lq = Lq {
            a,
            b,
            d: dm,
            q,
            r,
            gamma: 1.0,
        };
        return (lq, k);
    }
}

/// Continuous policy Riccati solution as the limit of
/// `(A−BK)ᵀPₜ₊₁ + Pₜ₊₁(A−BK) + W + γ⁻²PₜDDᵀPₜ = 0` from `P₀ = 0`.
pub fn oracle_care_policy(plant: &Lq, k: &Mat) -> Option<Mat> {
    let acl = &plant.a - &plant.b * k;
    let w = &plant.q + k.transpose() * &plant.r * k;
    let dd = &plant.d * plant.d.transpose() / (plant.gamma * plant.gamma);
    let mut p = Mat::zeros(acl.nrows(), acl.nrows());
    for _ in 0..200_000 {
        let next = kron_clyap(&acl, &(&w + &p * &dd * &p));
        let next = (&next + next.transpose()) * 0.5;
        if !next.norm().is_finite() || next.norm() > 1e12 {
            return None;
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= 1e-15 * (1.0 + p.norm()) {
            return Some(p);
        }
    }
    None
}
