use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{lambda_min, symmetrize, Mat};

/// A feedback gain `K` (control `u = -Kx`), stored as a `d × m` matrix.
pub type PolicyGain = Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDomain {
    Discrete,
    Continuous,
}

impl std::fmt::Display for TimeDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TimeDomain::Discrete => "discrete",
            TimeDomain::Continuous => "continuous",
        })
    }
}

/// Mixed-design instance `x⁺ = Ax + Bu + Dw`, `z = Cx + Eu`.
///
/// Only `Q = CᵀC` and `R = EᵀE` are stored: the cross term `EᵀC` is required
/// to vanish, so these two weights carry all the information about `C` and
/// `E` that the design problem uses. The same data describes a continuous
/// plant; the time domain is chosen per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub a: Mat,
    pub b: Mat,
    pub d: Mat,
    pub q: Mat,
    pub r: Mat,
    pub gamma: f64,
}

impl Plant {
    /// Builds a plant from the output matrices `C` and `E`, rejecting `EᵀC ≠ 0`.
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, e: Mat, gamma: f64) -> Result<Self> {
        if c.ncols() != a.nrows() || e.ncols() != b.ncols() || c.nrows() != e.nrows() {
            return Err(Error::dim(format!(
                "C is {}x{}, E is {}x{} for m={}, d={}",
                c.nrows(),
                c.ncols(),
                e.nrows(),
                e.ncols(),
                a.nrows(),
                b.ncols()
            )));
        }
        let cross = e.transpose() * &c;
        if cross.norm() > 1e-12 * (1.0 + c.norm() * e.norm()) {
            return Err(Error::Domain(format!(
                "E'C must vanish (norm {:.3e})",
                cross.norm()
            )));
        }
        Self::from_weights(a, b, d, c.transpose() * &c, e.transpose() * &e, gamma)
    }

    /// Builds a plant from the weights `Q = CᵀC ⪰ 0` and `R = EᵀE ≻ 0`.
    pub fn from_weights(a: Mat, b: Mat, d: Mat, q: Mat, r: Mat, gamma: f64) -> Result<Self> {
        let m = a.nrows();
        if a.ncols() != m || m == 0 {
            return Err(Error::dim(format!("A must be square, got {:?}", a.shape())));
        }
        if b.nrows() != m || b.ncols() == 0 {
            return Err(Error::dim(format!("B must be {m}xd, got {:?}", b.shape())));
        }
        if d.nrows() != m || d.ncols() == 0 {
            return Err(Error::dim(format!("D must be {m}xn, got {:?}", d.shape())));
        }
        if q.shape() != (m, m) {
            return Err(Error::dim(format!(
                "Q must be {m}x{m}, got {:?}",
                q.shape()
            )));
        }
        let dd = b.ncols();
        if r.shape() != (dd, dd) {
            return Err(Error::dim(format!(
                "R must be {dd}x{dd}, got {:?}",
                r.shape()
            )));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("D", &d), ("Q", &q), ("R", &r)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{name} has non-finite entries")));
            }
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Domain(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let tol = 1e-10;
        if (&q - q.transpose()).norm() > tol * (1.0 + q.norm()) {
            return Err(Error::Domain("Q must be symmetric".into()));
        }
        if (&r - r.transpose()).norm() > tol * (1.0 + r.norm()) {
            return Err(Error::Domain("R must be symmetric".into()));
        }
        if lambda_min(&q) < -tol * (1.0 + q.norm()) {
            return Err(Error::Domain("Q must be positive semidefinite".into()));
        }
        if lambda_min(&r) <= 0.0 {
            return Err(Error::Domain("R must be positive definite".into()));
        }
        Ok(Plant {
            q: symmetrize(&q),
            r: symmetrize(&r),
            a,
            b,
            d,
            gamma,
        })
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Domain(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(Plant {
            gamma,
            ..self.clone()
        })
    }

    /// State dimension `m`.
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `d`.
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Disturbance dimension `n`.
    pub fn n_disturbances(&self) -> usize {
        self.d.ncols()
    }

    pub fn closed_loop(&self, k: &Mat) -> Result<Mat> {
        self.check_gain(k)?;
        Ok(&self.a - &self.b * k)
    }

    /// Output weight of the closed loop, `CᵀC + KᵀRK`.
    pub fn output_weight(&self, k: &Mat) -> Result<Mat> {
        self.check_gain(k)?;
        Ok(symmetrize(&(&self.q + k.transpose() * &self.r * k)))
    }

    pub fn check_gain(&self, k: &Mat) -> Result<()> {
        if k.shape() != (self.n_inputs(), self.n_states()) {
            return Err(Error::dim(format!(
                "K must be {}x{}, got {:?}",
                self.n_inputs(),
                self.n_states(),
                k.shape()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("K has non-finite entries".into()));
        }
        Ok(())
    }

    /// `DDᵀ`.
    pub fn dd(&self) -> Mat {
        symmetrize(&(&self.d * self.d.transpose()))
    }
}
