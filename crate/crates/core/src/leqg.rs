//! Risk-sensitive (LEQG) control through its mixed-design equivalent.
//!
//! The risk parameter `β > 0`, noise covariance `W` and state weight `Q` map to
//! `γ = β^{-1/2}`, `D = W^{1/2}` and `CᵀC = Q`; the LEQG cost of a gain is then
//! `−β⁻¹ log det(I − βP_KW)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{lambda_min, sym_sqrt, symmetrize, Mat};
use crate::norms::membership;
use crate::plant::{Plant, TimeDomain};
use crate::riccati::{solve_optimal_modified_riccati, DISCRETE_MAX_ITER};

/// Eigenvalue floor for `W^{1/2}`.
pub const SQRT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeqgProblem {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    pub w: Mat,
    pub beta: f64,
}

impl LeqgProblem {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, w: Mat, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Domain(format!(
                "beta must be positive and finite (risk-averse), got {beta}"
            )));
        }
        let m = a.nrows();
        if q.shape() != (m, m) || w.shape() != (m, m) {
            return Err(Error::dim("Q and W must match A"));
        }
        for (name, mat) in [("Q", &q), ("W", &w)] {
            if (mat - mat.transpose()).norm() > 1e-10 * (1.0 + mat.norm()) {
                return Err(Error::Domain(format!("{name} must be symmetric")));
            }
            if lambda_min(mat) <= 0.0 {
                return Err(Error::Domain(format!("{name} must be positive definite")));
            }
        }
        Ok(LeqgProblem {
            a,
            b,
            q: symmetrize(&q),
            r,
            w: symmetrize(&w),
            beta,
        })
    }
}

/// Mixed-design plant with `γ = β^{-1/2}`, `D = W^{1/2}`, `CᵀC = Q`.
pub fn leqg_to_mixed(p: &LeqgProblem) -> Result<Plant> {
    if !p.beta.is_finite() || p.beta <= 0.0 {
        return Err(Error::Domain(format!(
            "beta must be positive, got {}",
            p.beta
        )));
    }
    let d = sym_sqrt(&p.w, SQRT_FLOOR)?;
    Plant::from_weights(
        p.a.clone(),
        p.b.clone(),
        d,
        p.q.clone(),
        p.r.clone(),
        p.beta.powf(-0.5),
    )
}

fn log_det_cost(p_k: &Mat, w: &Mat, beta: f64) -> Result<f64> {
    let m = p_k.nrows();
    let s = symmetrize(&(Mat::identity(m, m) - w * p_k * beta));
    // I − βPW and I − βW^{1/2}PW^{1/2} share their determinant; the latter is
    // symmetric, so its Cholesky factor gives the log-determinant.
    let root = sym_sqrt(w, SQRT_FLOOR)?;
    let sym = symmetrize(&(Mat::identity(m, m) - &root * p_k * &root * beta));
    let chol = sym.cholesky().ok_or_else(|| {
        Error::infeasible("I - beta P W is not positive definite", lambda_min(&s))
    })?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-log_det / beta)
}

/// `−β⁻¹ log det(I − βP_KW)` for a gain in the mapped feasible set.
pub fn leqg_cost(p: &LeqgProblem, k: &Mat) -> Result<f64> {
    let plant = leqg_to_mixed(p)?;
    let cert = membership(&plant, k, TimeDomain::Discrete);
    let Some(ric) = cert.riccati.filter(|_| cert.in_set) else {
        return Err(match cert.stabilizing {
            false => Error::Unstable { metric: f64::NAN },
            true => Error::infeasible("H-infinity bound 1/sqrt(beta) violated", f64::NAN),
        });
    };
    log_det_cost(&ric.p, &p.w, p.beta)
}

/// Optimal LEQG gain and cost from the optimal modified Riccati recursion.
pub fn leqg_optimal(p: &LeqgProblem) -> Result<(Mat, f64)> {
    let plant = leqg_to_mixed(p)?;
    let (p_star, k_star) = solve_optimal_modified_riccati(&plant, 1e-13, DISCRETE_MAX_ITER)?;
    let cost = log_det_cost(&p_star, &p.w, p.beta)?;
    Ok((k_star, cost))
}
