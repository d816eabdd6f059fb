//! Dense real-matrix primitives: eigenvalue-based stability tests, Lyapunov
//! solvers and a handful of symmetric-matrix helpers used throughout the crate.
//!
//! Lyapunov equations are solved by Kronecker vectorization, which is exact up
//! to the conditioning of an `n² × n²` LU solve. The problems this crate
//! targets have a handful of states, so the quartic cost is irrelevant.

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix, the container for every plant and gain matrix.
pub type Mat = DMatrix<f64>;

/// Discrete closed loops with spectral radius at or above `1 - STABILITY_MARGIN`
/// are treated as unstable.
pub const STABILITY_MARGIN: f64 = 1e-12;

const SCHUR_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub spectral_radius: f64,
    pub max_real_eig: f64,
    pub is_schur: bool,
    pub is_hurwitz: bool,
}

fn require_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::dim(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// All complex eigenvalues of a square matrix (real Schur / QR iteration).
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex<f64>>> {
    require_square(m, "eigenvalue input")?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "eigenvalues of a non-finite matrix".into(),
        ));
    }
    if m.nrows() == 1 {
        return Ok(vec![Complex::new(m[(0, 0)], 0.0)]);
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn max_real_eig(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn stability_report(m: &Mat) -> Result<StabilityReport> {
    let eigs = eigenvalues(m)?;
    let spectral_radius = eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let max_real_eig = eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport {
        spectral_radius,
        max_real_eig,
        is_schur: spectral_radius < 1.0,
        is_hurwitz: max_real_eig < 0.0,
    })
}

/// Returns the spectral radius if `m` is Schur stable with margin, else an
/// [`Error::Unstable`].
pub fn require_schur(m: &Mat) -> Result<f64> {
    let rho = spectral_radius(m)?;
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(Error::Unstable { metric: rho });
    }
    Ok(rho)
}

/// Returns the largest real part if `m` is Hurwitz with margin, else an
/// [`Error::Unstable`].
pub fn require_hurwitz(m: &Mat) -> Result<f64> {
    let re = max_real_eig(m)?;
    if re >= -STABILITY_MARGIN {
        return Err(Error::Unstable { metric: re });
    }
    Ok(re)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn require_symmetric(q: &Mat, what: &str) -> Result<()> {
    let asym = (q - q.transpose()).norm();
    if asym > 1e-9 * (1.0 + q.norm()) {
        return Err(Error::Domain(format!(
            "{what} must be symmetric (asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

fn solve_vectorized(op: Mat, rhs: &Mat, n: usize) -> Result<Mat> {
    let rhs = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Kronecker system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Lyapunov solution".into()));
    }
    Ok(symmetrize(&Mat::from_column_slice(n, n, sol.as_slice())))
}

/// Solves the discrete Lyapunov equation `AᵀXA − X + Q = 0`.
///
/// Requires `ρ(A) < 1`, which makes the solution unique and equal to
/// `Σ_t (Aᵀ)ᵗ Q Aᵗ`.
pub fn solve_dlyap(a: &Mat, q: &Mat) -> Result<Mat> {
    require_square(a, "A")?;
    let n = a.nrows();
    if q.shape() != (n, n) {
        return Err(Error::dim(format!(
            "Q must be {n}x{n}, got {:?}",
            q.shape()
        )));
    }
    require_symmetric(q, "Q")?;
    require_schur(a)?;
    let at = a.transpose();
    let op = Mat::identity(n * n, n * n) - kron(&at, &at);
    solve_vectorized(op, q, n)
}

/// Solves the continuous Lyapunov equation `AᵀX + XA + Q = 0` for Hurwitz `A`.
pub fn solve_clyap(a: &Mat, q: &Mat) -> Result<Mat> {
    require_square(a, "A")?;
    let n = a.nrows();
    if q.shape() != (n, n) {
        return Err(Error::dim(format!(
            "Q must be {n}x{n}, got {:?}",
            q.shape()
        )));
    }
    require_symmetric(q, "Q")?;
    require_hurwitz(a)?;
    let at = a.transpose();
    let eye = Mat::identity(n, n);
    let op = kron(&eye, &at) + kron(&at, &eye);
    solve_vectorized(op, &(-q), n)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut v: Vec<f64> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn lambda_max(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    lambda_max(&(m.transpose() * m)).max(0.0).sqrt()
}

/// Symmetric square root of a positive definite matrix. Eigenvalues below
/// `floor` are rejected.
pub fn sym_sqrt(m: &Mat, floor: f64) -> Result<Mat> {
    require_square(m, "square-root input")?;
    require_symmetric(m, "square-root input")?;
    let eig = symmetrize(m).symmetric_eigen();
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::Domain(format!(
            "matrix is not positive definite (eigenvalue {bad:.3e})"
        )));
    }
    let roots = Mat::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(symmetrize(
        &(&eig.eigenvectors * roots * eig.eigenvectors.transpose()),
    ))
}

/// Symmetric square root of a positive semidefinite matrix, clamping tiny
/// negative eigenvalues to zero.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let roots = Mat::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    symmetrize(&(&eig.eigenvectors * roots * eig.eigenvectors.transpose()))
}

/// Inverse of a (nominally) positive definite matrix via Cholesky; `None` when
/// the factorization fails.
pub fn spd_inverse(m: &Mat) -> Option<Mat> {
    symmetrize(m).cholesky().map(|c| symmetrize(&c.inverse()))
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

/// Solves `m · X = rhs`.
pub fn solve(m: &Mat, rhs: &Mat) -> Result<Mat> {
    m.clone()
        .lu()
        .solve(rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::dim("matrix must have at least one entry"));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::dim("ragged matrix rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix entries must be finite".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Row-major nested rows of a matrix.
pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
