//! Zero-sum LQ dynamic games `x⁺ = Ax + Bu + Dv` with stage cost
//! `xᵀQx + uᵀRᵘu − vᵀRᵛv`, the minimizer playing `u = −Kx` and the maximizer
//! `v = −Lx`.
//!
//! With `Rᵛ = γ²I` and `Q = CᵀC` the maximizer's best response reproduces the
//! mixed-design policy Riccati equation, so the Nash gain `K*` coincides with
//! the mixed-design optimum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{
    lambda_min, require_schur, solve, solve_dlyap, spectral_radius, symmetrize, Mat,
};
use crate::plant::Plant;
use crate::riccati::{DiscreteEval, OptimalProblem, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub a: Mat,
    pub b: Mat,
    pub d: Mat,
    pub q: Mat,
    pub ru: Mat,
    pub rv: Mat,
    pub sigma0: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashSolution {
    pub k_star: Mat,
    pub l_star: Mat,
    pub p_star: Mat,
    /// `Rᵛ − DᵀP*D ≻ 0`, `A − BK* − DL*` stable and the GARE residual small.
    pub value_matrix_certified: bool,
}

fn check_sym(name: &str, m: &Mat, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::dim(format!(
            "{name} must be {n}x{n}, got {:?}",
            m.shape()
        )));
    }
    if (m - m.transpose()).norm() > 1e-10 * (1.0 + m.norm()) {
        return Err(Error::Domain(format!("{name} must be symmetric")));
    }
    Ok(())
}

impl GameSpec {
    pub fn new(a: Mat, b: Mat, d: Mat, q: Mat, ru: Mat, rv: Mat, sigma0: Mat) -> Result<Self> {
        let m = a.nrows();
        if a.ncols() != m || b.nrows() != m || d.nrows() != m {
            return Err(Error::dim("A, B, D row counts must agree with square A"));
        }
        check_sym("Q", &q, m)?;
        check_sym("Ru", &ru, b.ncols())?;
        check_sym("Rv", &rv, d.ncols())?;
        check_sym("Sigma0", &sigma0, m)?;
        if lambda_min(&ru) <= 0.0 || lambda_min(&rv) <= 0.0 {
            return Err(Error::Domain("Ru and Rv must be positive definite".into()));
        }
        if lambda_min(&q) < 0.0 || lambda_min(&sigma0) < -1e-12 {
            return Err(Error::Domain(
                "Q and Sigma0 must be positive semidefinite".into(),
            ));
        }
        Ok(GameSpec {
            a,
            b,
            d,
            q,
            ru,
            rv,
            sigma0,
        })
    }

    /// Game induced by a mixed-design plant: `Q = CᵀC`, `Rᵘ = R`, `Rᵛ = γ²I`, `Σ₀ = I`.
    pub fn from_plant(plant: &Plant) -> Self {
        let n = plant.n_disturbances();
        let m = plant.n_states();
        GameSpec {
            a: plant.a.clone(),
            b: plant.b.clone(),
            d: plant.d.clone(),
            q: plant.q.clone(),
            ru: plant.r.clone(),
            rv: Mat::identity(n, n) * (plant.gamma * plant.gamma),
            sigma0: Mat::identity(m, m),
        }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn check_gains(&self, k: &Mat, l: &Mat) -> Result<()> {
        let m = self.n_states();
        if k.shape() != (self.b.ncols(), m) || l.shape() != (self.d.ncols(), m) {
            return Err(Error::dim(format!(
                "K must be {}x{m} and L {}x{m}",
                self.b.ncols(),
                self.d.ncols()
            )));
        }
        Ok(())
    }

    pub fn closed_loop(&self, k: &Mat, l: &Mat) -> Result<Mat> {
        self.check_gains(k, l)?;
        Ok(&self.a - &self.b * k - &self.d * l)
    }

    /// Stage weight `Q + KᵀRᵘK − LᵀRᵛL`.
    pub fn stage_weight(&self, k: &Mat, l: &Mat) -> Result<Mat> {
        self.check_gains(k, l)?;
        Ok(symmetrize(
            &(&self.q + k.transpose() * &self.ru * k - l.transpose() * &self.rv * l),
        ))
    }
}

/// Value matrix `P_{K,L}` and cost `tr(P_{K,L}Σ₀)`.
pub fn game_value(spec: &GameSpec, k: &Mat, l: &Mat) -> Result<(Mat, f64)> {
    let acl = spec.closed_loop(k, l)?;
    let p = solve_dlyap(&acl, &spec.stage_weight(k, l)?)?;
    let cost = (&p * &spec.sigma0).trace();
    Ok((p, cost))
}

/// State correlation `Σ_{K,L} = Σ_t Aₜ Σ₀ Aₜᵀ` of the closed loop.
pub fn state_correlation(spec: &GameSpec, k: &Mat, l: &Mat) -> Result<Mat> {
    let acl = spec.closed_loop(k, l)?;
    solve_dlyap(&acl.transpose(), &spec.sigma0)
}

/// Maximizer's best response `L(K) = (−Rᵛ + DᵀPD)⁻¹DᵀP(A−BK)` and the value
/// matrix of the inner Riccati equation.
pub fn best_response_l(spec: &GameSpec, k: &Mat) -> Result<(Mat, Mat)> {
    let l0 = Mat::zeros(spec.d.ncols(), spec.n_states());
    spec.check_gains(k, &l0)?;
    let acl = &spec.a - &spec.b * k;
    let eval = DiscreteEval {
        acl: acl.clone(),
        weight: symmetrize(&(&spec.q + k.transpose() * &spec.ru * k)),
        d: spec.d.clone(),
        rv: spec.rv.clone(),
    };
    let cert = eval.doubling(DEFAULT_TOL)?;
    let p = cert.p;
    let dtp = spec.d.transpose() * &p;
    let l = solve(&(&dtp * &spec.d - &spec.rv), &(dtp * acl))?;
    Ok((l, p))
}

/// `∇_L C(K,L) = 2[(−Rᵛ + DᵀPD)L − DᵀP(A−BK)]Σ_{K,L}`.
pub fn grad_l(spec: &GameSpec, k: &Mat, l: &Mat) -> Result<Mat> {
    let (p, _) = game_value(spec, k, l)?;
    let sigma = state_correlation(spec, k, l)?;
    let dtp = spec.d.transpose() * &p;
    Ok(((&dtp * &spec.d - &spec.rv) * l - dtp * (&spec.a - &spec.b * k)) * sigma * 2.0)
}

/// `∇_K C(K,L) = 2[(Rᵘ + BᵀPB)K − BᵀP(A−DL)]Σ_{K,L}`.
pub fn grad_k(spec: &GameSpec, k: &Mat, l: &Mat) -> Result<Mat> {
    let (p, _) = game_value(spec, k, l)?;
    let sigma = state_correlation(spec, k, l)?;
    let btp = spec.b.transpose() * &p;
    Ok(((&spec.ru + &btp * &spec.b) * k - btp * (&spec.a - &spec.d * l)) * sigma * 2.0)
}

/// Residual of `P = Q + AᵀPA − AᵀP[B D](diag(Rᵘ, −Rᵛ) + [B D]ᵀP[B D])⁻¹[B D]ᵀPA`.
pub fn gare_residual(spec: &GameSpec, p: &Mat) -> Result<f64> {
    let (du, dv) = (spec.b.ncols(), spec.d.ncols());
    let m = spec.n_states();
    let mut bd = Mat::zeros(m, du + dv);
    bd.view_mut((0, 0), (m, du)).copy_from(&spec.b);
    bd.view_mut((0, du), (m, dv)).copy_from(&spec.d);
    let mut blk = Mat::zeros(du + dv, du + dv);
    blk.view_mut((0, 0), (du, du)).copy_from(&spec.ru);
    blk.view_mut((du, du), (dv, dv)).copy_from(&(-&spec.rv));
    let mid = blk + bd.transpose() * p * &bd;
    let rhs = bd.transpose() * p * &spec.a;
    let corr = rhs.transpose() * solve(&mid, &rhs)?;
    Ok((&spec.q + spec.a.transpose() * p * &spec.a - corr - p).norm())
}

/// Nash gains written directly in terms of `P`:
///
/// ```text
/// K = [Rᵘ + BᵀPB − BᵀPD(−Rᵛ+DᵀPD)⁻¹DᵀPB]⁻¹ [BᵀPA − BᵀPD(−Rᵛ+DᵀPD)⁻¹DᵀPA]
/// L = [−Rᵛ + DᵀPD − DᵀPB(Rᵘ+BᵀPB)⁻¹BᵀPD]⁻¹ [DᵀPA − DᵀPB(Rᵘ+BᵀPB)⁻¹BᵀPA]
/// ```
pub fn closed_form_gains(spec: &GameSpec, p: &Mat) -> Result<(Mat, Mat)> {
    let (a, b, d) = (&spec.a, &spec.b, &spec.d);
    let btp = b.transpose() * p;
    let dtp = d.transpose() * p;
    let vv = &dtp * d - &spec.rv;
    let uu = &spec.ru + &btp * b;
    let k = solve(
        &(&uu - &btp * d * solve(&vv, &(&dtp * b))?),
        &(&btp * a - &btp * d * solve(&vv, &(&dtp * a))?),
    )?;
    let l = solve(
        &(&vv - &dtp * b * solve(&uu, &(&btp * d))?),
        &(&dtp * a - &dtp * b * solve(&uu, &(&btp * a))?),
    )?;
    Ok((k, l))
}

/// Solves the GARE by the modified Riccati recursion with `Rᵛ` in place of
/// `γ²I`, started from `P⁰ = Q`.
pub fn solve_gare(spec: &GameSpec, tol: f64, max_iter: usize) -> Result<NashSolution> {
    let problem = OptimalProblem {
        a: &spec.a,
        b: &spec.b,
        q: &spec.q,
        r: &spec.ru,
        d: &spec.d,
        rv: &spec.rv,
    };
    let (p, k) = problem.solve(spec.q.clone(), tol, max_iter)?;
    let dtp = spec.d.transpose() * &p;
    let l = solve(
        &(&dtp * &spec.d - &spec.rv),
        &(dtp * (&spec.a - &spec.b * &k)),
    )?;
    let margin = lambda_min(&(&spec.rv - spec.d.transpose() * &p * &spec.d));
    let acl = spec.closed_loop(&k, &l)?;
    let stable = spectral_radius(&acl)? < 1.0;
    let residual = gare_residual(spec, &p)?;
    let certified = margin > 0.0 && stable && residual <= 1e-8 * (1.0 + p.norm());
    Ok(NashSolution {
        k_star: k,
        l_star: l,
        p_star: p,
        value_matrix_certified: certified,
    })
}

/// `true` when `(K, L)` is stabilizing and `Rᵛ − DᵀP_{K,L(K)}D ≻ 0` holds for the
/// maximizer's Riccati equation at `K`.
pub fn game_feasible(spec: &GameSpec, k: &Mat) -> bool {
    let acl = &spec.a - &spec.b * k;
    require_schur(&acl).is_ok() && best_response_l(spec, k).is_ok()
}
