//! H∞ and H2 norms of the closed loop `T(K)` and membership in the feasible set.
//!
//! `T(K)` maps the disturbance `w` to the performance output with weight
//! `CᵀC + KᵀRK`, so `σ²_max(T(z)) = λ_max(G(z)ᴴ (CᵀC + KᵀRK) G(z))` with
//! `G(z) = (zI − A + BK)⁻¹D`. The weight is never square-rooted.

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{require_hurwitz, require_schur, solve_clyap, solve_dlyap, Mat};
use crate::plant::{Plant, TimeDomain};
use crate::riccati::{certify_policy, optimal_gain, RiccatiCertificate};

pub const DEFAULT_BISECT_TOL: f64 = 1e-6;
/// Grid size used to seed the lower bracket of [`hinf_bisect`].
pub const BRACKET_GRID_POINTS: usize = 512;
const BRACKET_LIMIT: f64 = 1e9;
const OMEGA_MIN: f64 = 1e-4;
const OMEGA_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HinfMethod {
    Bisection,
    FrequencyGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HinfResult {
    pub value: f64,
    pub method: HinfMethod,
    /// Grid method: `θ` (discrete) or `ω` (continuous) attaining the value.
    pub witness_freq: Option<f64>,
    /// Frequencies evaluated (grid) or bisection steps.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipReason {
    Ok,
    Unstable,
    HinfViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipCertificate {
    pub in_set: bool,
    pub stabilizing: bool,
    pub riccati: Option<RiccatiCertificate>,
    pub reason: MembershipReason,
}

fn require_stable(acl: &Mat, domain: TimeDomain) -> Result<()> {
    match domain {
        TimeDomain::Discrete => require_schur(acl).map(|_| ()),
        TimeDomain::Continuous => require_hurwitz(acl).map(|_| ()),
    }
}

struct Response {
    acl: DMatrix<Complex<f64>>,
    weight: DMatrix<Complex<f64>>,
    d: DMatrix<Complex<f64>>,
    domain: TimeDomain,
}

impl Response {
    fn new(plant: &Plant, k: &Mat, domain: TimeDomain) -> Result<Self> {
        let acl = plant.closed_loop(k)?;
        require_stable(&acl, domain)?;
        let cplx = |m: &Mat| m.map(|v| Complex::new(v, 0.0));
        Ok(Response {
            acl: cplx(&acl),
            weight: cplx(&plant.output_weight(k)?),
            d: cplx(&plant.d),
            domain,
        })
    }

    /// `σ²_max` at `θ` (discrete, `z = e^{iθ}`) or `ω` (continuous, `s = iω`).
    fn gain_sq(&self, freq: f64) -> f64 {
        let z = match self.domain {
            TimeDomain::Discrete => Complex::new(freq.cos(), freq.sin()),
            TimeDomain::Continuous => Complex::new(0.0, freq),
        };
        let m = self.acl.nrows();
        let resolvent = DMatrix::<Complex<f64>>::identity(m, m) * z - &self.acl;
        let Some(g) = resolvent.lu().solve(&self.d) else {
            return f64::INFINITY;
        };
        let h = g.adjoint() * &self.weight * &g;
        let h = (&h + h.adjoint()) * Complex::new(0.5, 0.0);
        h.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Evaluates `freqs` in parallel and returns the first index of the maximum.
    fn argmax(&self, freqs: &[f64]) -> (usize, f64) {
        freqs
            .par_iter()
            .map(|&f| self.gain_sq(f))
            .enumerate()
            .reduce(
                || (usize::MAX, f64::NEG_INFINITY),
                |a, b| {
                    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                        b
                    } else {
                        a
                    }
                },
            )
    }

    /// Golden-section search of `gain_sq ∘ map` on `[lo, hi]`.
    fn polish(&self, lo: f64, hi: f64, map: impl Fn(f64) -> f64) -> (f64, f64) {
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - ratio * (b - a);
        let mut x2 = a + ratio * (b - a);
        let mut f1 = self.gain_sq(map(x1));
        let mut f2 = self.gain_sq(map(x2));
        for _ in 0..80 {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - ratio * (b - a);
                f1 = self.gain_sq(map(x1));
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + ratio * (b - a);
                f2 = self.gain_sq(map(x2));
            }
        }
        if f1 >= f2 {
            (map(x1), f1)
        } else {
            (map(x2), f2)
        }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Lower bound on `‖T(K)‖_∞` from `n_points` frequency samples.
///
/// Discrete frequencies are `θⱼ = 2πj/n`. Continuous frequencies are `0` and a
/// log-spaced grid over `[1e-4, 1e4]`, followed by one refinement pass of the
/// same size over one decade either side of the best sample. The best sample
/// is finally polished by a golden-section search between its neighbors.
pub fn hinf_grid(
    plant: &Plant,
    k: &Mat,
    domain: TimeDomain,
    n_points: usize,
) -> Result<HinfResult> {
    if n_points == 0 {
        return Err(Error::Domain("n_points must be positive".into()));
    }
    let resp = Response::new(plant, k, domain)?;
    let mut evaluated = n_points;
    let (freq, best) = match domain {
        TimeDomain::Discrete => {
            let step = std::f64::consts::TAU / n_points as f64;
            let freqs: Vec<f64> = (0..n_points).map(|j| j as f64 * step).collect();
            let (i, v) = resp.argmax(&freqs);
            let (pf, pv) = resp.polish(freqs[i] - step, freqs[i] + step, |t| t);
            if pv > v {
                (pf.rem_euclid(std::f64::consts::TAU), pv)
            } else {
                (freqs[i], v)
            }
        }
        TimeDomain::Continuous => {
            let mut freqs = vec![0.0];
            freqs.extend(log_space(
                OMEGA_MIN,
                OMEGA_MAX,
                n_points.saturating_sub(1).max(1),
            ));
            let (i, mut v) = resp.argmax(&freqs);
            let mut w = freqs[i];
            if w > 0.0 {
                let fine = log_space(w / 10.0, w * 10.0, n_points);
                evaluated += fine.len();
                let (j, fv) = resp.argmax(&fine);
                if fv > v {
                    v = fv;
                    w = fine[j];
                }
                let ratio = if n_points > 1 {
                    100f64.powf(1.0 / (n_points - 1) as f64)
                } else {
                    10.0
                };
                let (pf, pv) = resp.polish((w / ratio).ln(), (w * ratio).ln(), f64::exp);
                if pv > v {
                    v = pv;
                    w = pf;
                }
            }
            (w, v)
        }
    };
    Ok(HinfResult {
        value: best.max(0.0).sqrt(),
        method: HinfMethod::FrequencyGrid,
        witness_freq: Some(freq),
        iterations: evaluated,
    })
}

fn certifies(plant: &Plant, k: &Mat, domain: TimeDomain, gamma: f64) -> Result<bool> {
    match certify_policy(&plant.with_gamma(gamma)?, k, domain) {
        Ok(cert) => Ok(cert.feasible),
        Err(Error::Infeasible { .. } | Error::NonConvergence { .. } | Error::Numerical(_)) => {
            Ok(false)
        }
        Err(e) => Err(e),
    }
}

/// `‖T(K)‖_∞` by bisection on `γ` with the policy Riccati equation as the
/// feasibility oracle. Returns the midpoint of the final bracket.
pub fn hinf_bisect(plant: &Plant, k: &Mat, domain: TimeDomain, tol: f64) -> Result<HinfResult> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain("tol must be positive".into()));
    }
    let grid = hinf_grid(plant, k, domain, BRACKET_GRID_POINTS)?;
    let mut lo = grid.value;
    if lo == 0.0 {
        return Ok(HinfResult {
            value: 0.0,
            method: HinfMethod::Bisection,
            witness_freq: None,
            iterations: 0,
        });
    }
    let mut hi = 2.0 * lo;
    let mut iterations = 0;
    while !certifies(plant, k, domain, hi)? {
        iterations += 1;
        lo = hi;
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Err(Error::Overflow {
                bound: BRACKET_LIMIT,
            });
        }
    }
    while hi - lo > tol {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if certifies(plant, k, domain, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(HinfResult {
        value: 0.5 * (lo + hi),
        method: HinfMethod::Bisection,
        witness_freq: None,
        iterations,
    })
}

/// H2 norm `sqrt(tr(DᵀXD))` with `X` the closed-loop observability Gramian
/// for the weight `CᵀC + KᵀRK`.
pub fn h2_norm(plant: &Plant, k: &Mat, domain: TimeDomain) -> Result<f64> {
    let acl = plant.closed_loop(k)?;
    let weight = plant.output_weight(k)?;
    let x = match domain {
        TimeDomain::Discrete => solve_dlyap(&acl, &weight)?,
        TimeDomain::Continuous => solve_clyap(&acl, &weight)?,
    };
    Ok((plant.d.transpose() * x * &plant.d).trace().max(0.0).sqrt())
}

/// Decides whether `K` lies in the feasible set for the plant's `γ`.
pub fn membership(plant: &Plant, k: &Mat, domain: TimeDomain) -> MembershipCertificate {
    let unstable = MembershipCertificate {
        in_set: false,
        stabilizing: false,
        riccati: None,
        reason: MembershipReason::Unstable,
    };
    let Ok(acl) = plant.closed_loop(k) else {
        return unstable;
    };
    if require_stable(&acl, domain).is_err() {
        return unstable;
    }
    match certify_policy(plant, k, domain) {
        Ok(cert) if cert.feasible => MembershipCertificate {
            in_set: true,
            stabilizing: true,
            riccati: Some(cert),
            reason: MembershipReason::Ok,
        },
        Ok(cert) => MembershipCertificate {
            in_set: false,
            stabilizing: true,
            riccati: Some(cert),
            reason: MembershipReason::HinfViolation,
        },
        Err(_) => MembershipCertificate {
            in_set: false,
            stabilizing: true,
            riccati: None,
            reason: MembershipReason::HinfViolation,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationResult {
    /// Smallest `γ` certified feasible by the bisection.
    pub gamma_star: f64,
    /// Largest `γ` found infeasible.
    pub gamma_lower: f64,
    /// Optimal gain at `gamma_star`.
    pub k: Mat,
}

fn attenuation_feasible(plant: &Plant, domain: TimeDomain, gamma: f64) -> Option<Mat> {
    let p = plant.with_gamma(gamma).ok()?;
    let (_, k) = optimal_gain(&p, domain).ok()?;
    membership(&p, &k, domain).in_set.then_some(k)
}

/// Optimal attenuation level: bisection on `γ` over the existence of an
/// optimal gain that the policy Riccati equation certifies at that `γ`.
pub fn optimal_attenuation(
    plant: &Plant,
    domain: TimeDomain,
    tol: f64,
) -> Result<AttenuationResult> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain("tol must be positive".into()));
    }
    let mut hi = plant.gamma;
    let mut k_hi = loop {
        if let Some(k) = attenuation_feasible(plant, domain, hi) {
            break k;
        }
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Err(Error::Overflow {
                bound: BRACKET_LIMIT,
            });
        }
    };
    let mut lo = hi / 2.0;
    while let Some(k) = attenuation_feasible(plant, domain, lo) {
        hi = lo;
        k_hi = k;
        lo /= 2.0;
        if lo < tol {
            return Ok(AttenuationResult {
                gamma_star: hi,
                gamma_lower: 0.0,
                k: k_hi,
            });
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match attenuation_feasible(plant, domain, mid) {
            Some(k) => {
                hi = mid;
                k_hi = k;
            }
            None => lo = mid,
        }
    }
    Ok(AttenuationResult {
        gamma_star: hi,
        gamma_lower: lo,
        k: k_hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, d: f64, gamma: f64) -> Plant {
        let s = |v: f64| Mat::from_element(1, 1, v);
        Plant::from_weights(s(a), s(1.0), s(d), s(1.0), s(1.0), gamma).unwrap()
    }

    #[test]
    fn scalar_discrete_peak() {
        // |d| / (1 − |a|) at θ = 0 for a > 0.
        let p = scalar(0.5, 1.0, 10.0);
        let k = Mat::zeros(1, 1);
        let g = hinf_grid(&p, &k, TimeDomain::Discrete, 64).unwrap();
        assert_relative_eq!(g.value, 2.0, epsilon = 1e-12);
        let b = hinf_bisect(&p, &k, TimeDomain::Discrete, 1e-8).unwrap();
        assert_relative_eq!(b.value, 2.0, epsilon = 1e-7);
    }

    #[test]
    fn scalar_continuous_peak() {
        let p = scalar(-2.0, 3.0, 10.0);
        let k = Mat::zeros(1, 1);
        let g = hinf_grid(&p, &k, TimeDomain::Continuous, 64).unwrap();
        assert_relative_eq!(g.value, 1.5, epsilon = 1e-12);
        let b = hinf_bisect(&p, &k, TimeDomain::Continuous, 1e-8).unwrap();
        assert_relative_eq!(b.value, 1.5, epsilon = 1e-7);
    }

    #[test]
    fn zero_weight_zero_norm() {
        let s = |v: f64| Mat::from_element(1, 1, v);
        let p = Plant::from_weights(s(0.5), s(1.0), s(1.0), s(0.0), s(1.0), 1.0).unwrap();
        let k = Mat::zeros(1, 1);
        assert_eq!(
            hinf_grid(&p, &k, TimeDomain::Discrete, 16).unwrap().value,
            0.0
        );
        assert_eq!(
            hinf_bisect(&p, &k, TimeDomain::Discrete, 1e-6)
                .unwrap()
                .value,
            0.0
        );
        assert_eq!(h2_norm(&p, &k, TimeDomain::Discrete).unwrap(), 0.0);
    }

    #[test]
    fn unstable_reported() {
        let p = scalar(1.5, 1.0, 1.0);
        let k = Mat::zeros(1, 1);
        assert!(matches!(
            hinf_grid(&p, &k, TimeDomain::Discrete, 8),
            Err(Error::Unstable { .. })
        ));
        let cert = membership(&p, &k, TimeDomain::Discrete);
        assert_eq!(cert.reason, MembershipReason::Unstable);
        assert!(!cert.in_set && !cert.stabilizing);
    }

    #[test]
    fn h2_scalar_discrete() {
        // x = w / (1 − a²) with w = q + r k².
        let p = scalar(0.5, 2.0, 10.0);
        let h2 = h2_norm(&p, &Mat::zeros(1, 1), TimeDomain::Discrete).unwrap();
        assert_relative_eq!(h2, (4.0 / 0.75f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn membership_tracks_gamma() {
        let k = Mat::zeros(1, 1);
        assert!(membership(&scalar(0.5, 1.0, 2.1), &k, TimeDomain::Discrete).in_set);
        let out = membership(&scalar(0.5, 1.0, 1.9), &k, TimeDomain::Discrete);
        assert!(!out.in_set && out.stabilizing);
        assert_eq!(out.reason, MembershipReason::HinfViolation);
    }
}
