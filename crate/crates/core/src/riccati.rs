//! Riccati equations for policy evaluation and for the optimal gain.
//!
//! For a fixed gain `K` the discrete policy Riccati equation is
//!
//! ```text
//! P = CᵀC + KᵀRK + (A−BK)ᵀ P̃ (A−BK),   P̃ = P + PD(γ²I − DᵀPD)⁻¹DᵀP
//! ```
//!
//! and its continuous counterpart is
//! `(A−BK)ᵀP + P(A−BK) + CᵀC + KᵀRK + γ⁻²PDDᵀP = 0`.
//!
//! Discrete equations are solved by the monotone fixed-point recursion started
//! at `P⁰ = 0`. [`solve_dare_policy_doubling`] runs the same recursion with
//! doubling, so that `k` steps reach iterate `2ᵏ`; every other module certifies
//! membership through it. The zero-sum game module reuses the machinery with
//! a general disturbance weight `Rv` in place of `γ²I`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{
    inverse, lambda_min, max_real_eig, require_hurwitz, require_schur, solve, solve_clyap,
    spectral_radius, symmetrize, Mat, STABILITY_MARGIN,
};
use crate::plant::{Plant, TimeDomain};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DISCRETE_MAX_ITER: usize = 100_000;
pub const CONTINUOUS_MAX_ITER: usize = 200;
/// Iterates with Frobenius norm above this are declared divergent.
pub const DIVERGENCE_CAP: f64 = 1e12;
/// Smallest admissible eigenvalue of `γ²I − DᵀPD`.
pub const MARGIN_FLOOR: f64 = 1e-12;
/// Relative equation residual (scaled by `1 + ‖P‖_F`) accepted by a certificate.
pub const RESIDUAL_SLACK: f64 = 1e-8;
const PSD_SLACK: f64 = 1e-10;
const MAX_DOUBLINGS: usize = 200;

/// Solution of a policy Riccati equation together with the bounded-real
/// conditions evaluated at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiCertificate {
    pub p: Mat,
    /// `P̃`; equal to `P` in continuous time.
    pub p_tilde: Mat,
    /// Frobenius norm of the Riccati equation residual at `P`.
    pub residual: f64,
    /// Discrete: `λ_min(γ²I − DᵀPD)`. Continuous: `−max Re λ(A−BK+γ⁻²DDᵀP)`.
    pub brl_margin: f64,
    /// Discrete: spectral radius of `(I − γ⁻²DDᵀP)⁻¹(A−BK)`.
    /// Continuous: largest real part of `A−BK+γ⁻²DDᵀP`.
    pub closedloop_radius: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub domain: TimeDomain,
}

/// `P + PD(γ²I − DᵀPD)⁻¹DᵀP`.
pub fn tilde_p(p: &Mat, d: &Mat, gamma: f64) -> Result<Mat> {
    let n = d.ncols();
    tilde_p_weighted(p, d, &(Mat::identity(n, n) * (gamma * gamma)))
}

/// `P + PD(Rv − DᵀPD)⁻¹DᵀP` for a general positive definite weight `Rv`.
pub fn tilde_p_weighted(p: &Mat, d: &Mat, rv: &Mat) -> Result<Mat> {
    if p.nrows() != d.nrows() || rv.shape() != (d.ncols(), d.ncols()) {
        return Err(Error::dim("tilde_p: incompatible P, D, Rv"));
    }
    let pd = p * d;
    let s = symmetrize(&(rv - d.transpose() * &pd));
    let margin = lambda_min(&s);
    if margin <= MARGIN_FLOOR {
        return Err(Error::infeasible("attenuation margin lost", margin));
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::infeasible("attenuation margin lost", margin))?;
    Ok(symmetrize(&(p + &pd * chol.solve(&pd.transpose()))))
}

/// Discrete policy-evaluation problem `P = W + AclᵀP̃Acl` with weight `Rv`.
#[derive(Debug, Clone)]
pub(crate) struct DiscreteEval {
    pub acl: Mat,
    pub weight: Mat,
    pub d: Mat,
    pub rv: Mat,
}

impl DiscreteEval {
    pub fn from_plant(plant: &Plant, k: &Mat) -> Result<Self> {
        let n = plant.n_disturbances();
        Ok(DiscreteEval {
            acl: plant.closed_loop(k)?,
            weight: plant.output_weight(k)?,
            d: plant.d.clone(),
            rv: Mat::identity(n, n) * (plant.gamma * plant.gamma),
        })
    }

    fn margin(&self, p: &Mat) -> f64 {
        lambda_min(&(&self.rv - self.d.transpose() * p * &self.d))
    }

    pub fn apply(&self, p: &Mat) -> Result<Mat> {
        let pt = tilde_p_weighted(p, &self.d, &self.rv)?;
        Ok(symmetrize(
            &(&self.weight + self.acl.transpose() * pt * &self.acl),
        ))
    }

    fn certify(&self, p: Mat, iterations: usize) -> Result<RiccatiCertificate> {
        let margin = self.margin(&p);
        let m = p.nrows();
        let (p_tilde, residual, radius) = match tilde_p_weighted(&p, &self.d, &self.rv) {
            Ok(pt) => {
                let residual = (&self.weight + self.acl.transpose() * &pt * &self.acl - &p).norm();
                let rv_inv = inverse(&self.rv)?;
                let shrink = Mat::identity(m, m) - &self.d * rv_inv * self.d.transpose() * &p;
                let abar = solve(&shrink, &self.acl)?;
                (pt, residual, spectral_radius(&abar)?)
            }
            Err(_) => (p.clone(), f64::INFINITY, f64::INFINITY),
        };
        let feasible = margin > MARGIN_FLOOR
            && lambda_min(&p) >= -PSD_SLACK
            && residual <= RESIDUAL_SLACK * (1.0 + p.norm())
            && radius < 1.0 - STABILITY_MARGIN;
        Ok(RiccatiCertificate {
            p,
            p_tilde,
            residual,
            brl_margin: margin,
            closedloop_radius: radius,
            feasible,
            iterations,
            domain: TimeDomain::Discrete,
        })
    }

    pub fn fixed_point(&self, p0: Mat, tol: f64, max_iter: usize) -> Result<RiccatiCertificate> {
        require_schur(&self.acl)?;
        let mut p = p0;
        for t in 1..=max_iter {
            let next = self.apply(&p)?;
            let norm = next.norm();
            if !norm.is_finite() || norm > DIVERGENCE_CAP {
                return Err(Error::infeasible(
                    "Riccati iterates diverge",
                    self.margin(&p),
                ));
            }
            let change = (&next - &p).norm();
            p = next;
            if change <= tol {
                return self.finish(p, t);
            }
        }
        let residual = (self.apply(&p)? - &p).norm();
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual,
        })
    }

    pub fn doubling(&self, tol: f64) -> Result<RiccatiCertificate> {
        require_schur(&self.acl)?;
        let m = self.acl.nrows();
        let eye = Mat::identity(m, m);
        let rv_inv = inverse(&self.rv)?;
        let mut ak = self.acl.clone();
        let mut gk = -(&self.d * rv_inv * self.d.transpose());
        let mut hk = self.weight.clone();
        for k in 1..=MAX_DOUBLINGS {
            let margin = self.margin(&hk);
            if margin <= MARGIN_FLOOR {
                return Err(Error::infeasible("attenuation margin lost", margin));
            }
            let w = &eye + &gk * &hk;
            let winv_a =
                solve(&w, &ak).map_err(|_| Error::infeasible("doubling step singular", margin))?;
            let winv_g =
                solve(&w, &gk).map_err(|_| Error::infeasible("doubling step singular", margin))?;
            let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &winv_a));
            let g_next = symmetrize(&(&gk + &ak * winv_g * ak.transpose()));
            let a_next = &ak * winv_a;
            let norm = h_next.norm();
            if !norm.is_finite() || norm > DIVERGENCE_CAP {
                return Err(Error::infeasible("Riccati iterates diverge", margin));
            }
            let change = (&h_next - &hk).norm();
            hk = h_next;
            gk = g_next;
            ak = a_next;
            if change <= tol * (1.0 + norm) {
                // One plain step absorbs the rounding of the doubling products.
                let polished = self.apply(&hk)?;
                return self.finish(polished, k);
            }
        }
        Err(Error::NonConvergence {
            iterations: MAX_DOUBLINGS,
            residual: (self.apply(&hk)? - &hk).norm(),
        })
    }

    fn finish(&self, p: Mat, iterations: usize) -> Result<RiccatiCertificate> {
        let cert = self.certify(p, iterations)?;
        if cert.feasible {
            Ok(cert)
        } else if cert.brl_margin <= MARGIN_FLOOR {
            Err(Error::infeasible(
                "attenuation margin lost",
                cert.brl_margin,
            ))
        } else if cert.closedloop_radius >= 1.0 - STABILITY_MARGIN {
            Err(Error::infeasible(
                "limit is not a stabilizing solution",
                cert.brl_margin,
            ))
        } else {
            Err(Error::infeasible(
                format!("residual {:.3e} too large", cert.residual),
                cert.brl_margin,
            ))
        }
    }
}

/// Applies one step of the discrete policy recursion, `P ↦ CᵀC + KᵀRK + (A−BK)ᵀP̃(A−BK)`.
pub fn dare_policy_map(plant: &Plant, k: &Mat, p: &Mat) -> Result<Mat> {
    DiscreteEval::from_plant(plant, k)?.apply(p)
}

/// Solves the discrete policy Riccati equation by fixed-point recursion from `P⁰ = 0`.
///
/// On success the certificate carries the minimal (stabilizing) solution.
/// Losing `γ²I − DᵀPᵗD ≻ 0` or divergence certifies `‖T(K)‖_∞ ≥ γ` and is
/// reported as [`Error::Infeasible`].
pub fn solve_dare_policy(
    plant: &Plant,
    k: &Mat,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiCertificate> {
    let m = plant.n_states();
    solve_dare_policy_from(plant, k, &Mat::zeros(m, m), tol, max_iter)
}

/// [`solve_dare_policy`] started from a given `P⁰` (convergent for `0 ⪯ P⁰ ⪯ CᵀC`).
pub fn solve_dare_policy_from(
    plant: &Plant,
    k: &Mat,
    p0: &Mat,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiCertificate> {
    if p0.shape() != plant.a.shape() {
        return Err(Error::dim("P0 must match A"));
    }
    DiscreteEval::from_plant(plant, k)?.fixed_point(symmetrize(p0), tol, max_iter)
}

/// Same solution as [`solve_dare_policy`], reached by the doubling recursion.
///
/// `tol` bounds the relative change between consecutive doubled iterates.
pub fn solve_dare_policy_doubling(plant: &Plant, k: &Mat, tol: f64) -> Result<RiccatiCertificate> {
    DiscreteEval::from_plant(plant, k)?.doubling(tol)
}

fn care_residual(ak: &Mat, weight: &Mat, ddg: &Mat, p: &Mat) -> f64 {
    (ak.transpose() * p + p * ak + weight + p * ddg * p).norm()
}

/// Solves the continuous policy Riccati equation by Newton iteration.
///
/// Each step solves `ĀᵀP + PĀ + CᵀC + KᵀRK − γ⁻²P'DDᵀP' = 0` with
/// `Ā = A−BK+γ⁻²DDᵀP'` and `P'` the previous iterate, starting from `P' = 0`.
/// The iteration stops once the residual is below `tol·(1 + ‖P‖_F)`.
pub fn solve_care_policy(
    plant: &Plant,
    k: &Mat,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiCertificate> {
    let ak = plant.closed_loop(k)?;
    require_hurwitz(&ak)?;
    let weight = plant.output_weight(k)?;
    let ddg = plant.dd() / (plant.gamma * plant.gamma);
    let m = plant.n_states();
    let mut p = Mat::zeros(m, m);
    for t in 1..=max_iter {
        let abar = &ak + &ddg * &p;
        let re = max_real_eig(&abar)?;
        if re >= -STABILITY_MARGIN {
            return Err(Error::infeasible("Newton closed loop is not Hurwitz", -re));
        }
        let last_margin = -re;
        let forcing = symmetrize(&(&weight - &p * &ddg * &p));
        let next = match solve_clyap(&abar, &forcing) {
            Ok(x) => x,
            Err(Error::Unstable { metric }) => {
                return Err(Error::infeasible(
                    "Newton closed loop is not Hurwitz",
                    -metric,
                ))
            }
            Err(e) => return Err(e),
        };
        let norm = next.norm();
        if !norm.is_finite() || norm > DIVERGENCE_CAP {
            return Err(Error::infeasible("Riccati iterates diverge", last_margin));
        }
        let change = (&next - &p).norm();
        p = next;
        let residual = care_residual(&ak, &weight, &ddg, &p);
        if residual <= tol * (1.0 + norm) || change <= 4.0 * f64::EPSILON * (1.0 + norm) {
            let abar = &ak + &ddg * &p;
            let re = max_real_eig(&abar)?;
            let feasible = re < -STABILITY_MARGIN
                && lambda_min(&p) >= -PSD_SLACK
                && residual <= RESIDUAL_SLACK * (1.0 + norm);
            if !feasible {
                return Err(Error::infeasible(
                    "limit is not a stabilizing solution",
                    -re,
                ));
            }
            return Ok(RiccatiCertificate {
                p_tilde: p.clone(),
                p,
                residual,
                brl_margin: -re,
                closedloop_radius: re,
                feasible,
                iterations: t,
                domain: TimeDomain::Continuous,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: care_residual(&ak, &weight, &ddg, &p),
    })
}

/// Policy certificate in either time domain with default tolerances; discrete
/// problems use the doubling recursion.
pub fn certify_policy(plant: &Plant, k: &Mat, domain: TimeDomain) -> Result<RiccatiCertificate> {
    match domain {
        TimeDomain::Discrete => solve_dare_policy_doubling(plant, k, DEFAULT_TOL),
        TimeDomain::Continuous => solve_care_policy(plant, k, DEFAULT_TOL, CONTINUOUS_MAX_ITER),
    }
}

/// Data for the optimal recursion with a general disturbance weight.
pub(crate) struct OptimalProblem<'a> {
    pub a: &'a Mat,
    pub b: &'a Mat,
    pub q: &'a Mat,
    pub r: &'a Mat,
    pub d: &'a Mat,
    pub rv: &'a Mat,
}

impl OptimalProblem<'_> {
    /// Gain `(R + BᵀP̃B)⁻¹BᵀP̃A` for a given `P̃`.
    pub fn gain(&self, pt: &Mat) -> Result<Mat> {
        let btp = self.b.transpose() * pt;
        solve(&(self.r + &btp * self.b), &(btp * self.a))
    }

    pub fn solve(&self, p0: Mat, tol: f64, max_iter: usize) -> Result<(Mat, Mat)> {
        let mut p = p0;
        let mut last_margin = f64::NAN;
        for _ in 0..max_iter {
            let pt = tilde_p_weighted(&p, self.d, self.rv)?;
            last_margin = lambda_min(&(self.rv - self.d.transpose() * &p * self.d));
            let k = self.gain(&pt)?;
            let acl = self.a - self.b * &k;
            let next =
                symmetrize(&(self.q + k.transpose() * self.r * &k + acl.transpose() * pt * &acl));
            let norm = next.norm();
            if !norm.is_finite() || norm > DIVERGENCE_CAP {
                return Err(Error::infeasible("optimal recursion diverges", last_margin));
            }
            let change = (&next - &p).norm();
            p = next;
            if change <= tol {
                return self.verify(p);
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: last_margin,
        })
    }

    fn verify(&self, p: Mat) -> Result<(Mat, Mat)> {
        let pt = tilde_p_weighted(&p, self.d, self.rv)?;
        let margin = lambda_min(&(self.rv - self.d.transpose() * &p * self.d));
        let k = self.gain(&pt)?;
        let acl = self.a - self.b * &k;
        if spectral_radius(&acl)? >= 1.0 - STABILITY_MARGIN {
            return Err(Error::infeasible("optimal gain is not stabilizing", margin));
        }
        let m = p.nrows();
        let shrink = Mat::identity(m, m) - self.d * inverse(self.rv)? * self.d.transpose() * &p;
        if spectral_radius(&solve(&shrink, &acl)?)? >= 1.0 - STABILITY_MARGIN {
            return Err(Error::infeasible(
                "limit is not a stabilizing solution",
                margin,
            ));
        }
        Ok((p, k))
    }
}

/// Runs the optimal modified Riccati recursion from `P⁰ = 0` and returns `(P*, K*)`.
///
/// Each step forms `P̃ᵗ`, the gain `Kᵗ⁺¹ = (R+BᵀP̃ᵗB)⁻¹BᵀP̃ᵗA`, and the value
/// `Pᵗ⁺¹ = CᵀC + KᵀRK + (A−BK)ᵀP̃ᵗ(A−BK)`.
pub fn solve_optimal_modified_riccati(
    plant: &Plant,
    tol: f64,
    max_iter: usize,
) -> Result<(Mat, Mat)> {
    let n = plant.n_disturbances();
    let rv = Mat::identity(n, n) * (plant.gamma * plant.gamma);
    let m = plant.n_states();
    OptimalProblem {
        a: &plant.a,
        b: &plant.b,
        q: &plant.q,
        r: &plant.r,
        d: &plant.d,
        rv: &rv,
    }
    .solve(Mat::zeros(m, m), tol, max_iter)
}

/// Stabilizing solution of the continuous optimal Riccati equation
/// `AᵀP + PA + CᵀC − P(BR⁻¹Bᵀ − γ⁻²DDᵀ)P = 0`, returned with `K* = R⁻¹BᵀP`.
///
/// The stable invariant subspace of the Hamiltonian matrix is extracted from
/// its matrix sign function. Failure of the sign iteration (eigenvalues on the
/// imaginary axis), an indefinite solution, or a gain outside the feasible set
/// is reported as [`Error::Infeasible`].
pub fn solve_care_optimal(plant: &Plant) -> Result<(Mat, Mat)> {
    let m = plant.n_states();
    let r_inv = inverse(&plant.r)?;
    let g2 = plant.gamma * plant.gamma;
    let s = symmetrize(&(&plant.b * &r_inv * plant.b.transpose() - plant.dd() / g2));
    let mut h = Mat::zeros(2 * m, 2 * m);
    h.view_mut((0, 0), (m, m)).copy_from(&plant.a);
    h.view_mut((0, m), (m, m)).copy_from(&(-&s));
    h.view_mut((m, 0), (m, m)).copy_from(&(-&plant.q));
    h.view_mut((m, m), (m, m))
        .copy_from(&(-plant.a.transpose()));

    let sign = matrix_sign(h)?;
    let eye = Mat::identity(m, m);
    let mut lhs = Mat::zeros(2 * m, m);
    lhs.view_mut((0, 0), (m, m))
        .copy_from(&sign.view((0, m), (m, m)));
    lhs.view_mut((m, 0), (m, m))
        .copy_from(&(sign.view((m, m), (m, m)) + &eye));
    let mut rhs = Mat::zeros(2 * m, m);
    rhs.view_mut((0, 0), (m, m))
        .copy_from(&(-(sign.view((0, 0), (m, m)) + &eye)));
    rhs.view_mut((m, 0), (m, m))
        .copy_from(&(-sign.view((m, 0), (m, m))));
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    if (&x - x.transpose()).norm() > 1e-6 * (1.0 + x.norm()) {
        return Err(Error::infeasible(
            "stable subspace gives a non-symmetric solution",
            0.0,
        ));
    }
    let p = symmetrize(&x);
    let residual = (plant.a.transpose() * &p + &p * &plant.a + &plant.q - &p * &s * &p).norm();
    if !residual.is_finite() || residual > 1e-6 * (1.0 + p.norm() * p.norm()) {
        return Err(Error::infeasible(
            format!("Riccati residual {residual:.3e}"),
            0.0,
        ));
    }
    let psd = lambda_min(&p);
    if psd < -1e-8 * (1.0 + p.norm()) {
        return Err(Error::infeasible(
            "optimal Riccati solution is indefinite",
            psd,
        ));
    }
    let k = &r_inv * plant.b.transpose() * &p;
    Ok((p, k))
}

/// Matrix sign function by the determinant-scaled Newton iteration.
fn matrix_sign(mut z: Mat) -> Result<Mat> {
    let n = z.nrows() as f64;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let log_det: f64 = lu.u().diagonal().iter().map(|u| u.abs().ln()).sum();
        let zinv = lu
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::infeasible("Hamiltonian has imaginary-axis eigenvalues", 0.0))?;
        let c = (-log_det / n).exp();
        let next = (&z * c + zinv / c) * 0.5;
        let change = (&next - &z).norm();
        z = next;
        if !z.norm().is_finite() {
            break;
        }
        if change <= 1e-13 * z.norm() {
            return Ok(z);
        }
    }
    Err(Error::infeasible(
        "Hamiltonian has imaginary-axis eigenvalues",
        0.0,
    ))
}

/// Optimal gain in either time domain with default tolerances.
pub fn optimal_gain(plant: &Plant, domain: TimeDomain) -> Result<(Mat, Mat)> {
    match domain {
        TimeDomain::Discrete => solve_optimal_modified_riccati(plant, 1e-13, DISCRETE_MAX_ITER),
        TimeDomain::Continuous => solve_care_optimal(plant),
    }
}
