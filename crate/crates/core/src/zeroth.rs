//! Model-free policy optimization for zero-sum LQ games.
//!
//! Gradients are estimated with the one-point smoothing estimator
//! `(d̃/r²)·mean(Cᵢ Uᵢ)` where `Uᵢ` is uniform on the Frobenius sphere of radius
//! `r` and `d̃` is the number of gain entries. [`inner_ng`] runs the
//! maximizer's ascent for a fixed `K`; [`outer_ng`] wraps it in a descent on
//! `K`.
//!
//! Randomness is reproducible: sample `i` of an estimate seeded with `s` draws
//! from `ChaCha8` seeded with `s` on stream `i`, first the perturbation and
//! then the initial state. Nested loops derive their seeds with
//! [`derive_seed`], so results do not depend on thread scheduling.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqgame::{best_response_l, game_value, grad_k, grad_l, state_correlation, GameSpec};
use crate::matlin::{psd_sqrt, spectral_radius, symmetrize, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub m_traj: usize,
    pub horizon: usize,
    pub radius: f64,
    pub seed: u64,
    /// Covariance of the initial state.
    pub init_cov: Mat,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_traj == 0 || self.horizon == 0 {
            return Err(Error::Domain("m_traj and horizon must be positive".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Domain("radius must be positive".into()));
        }
        Ok(())
    }

    fn reseeded(&self, seed: u64) -> Self {
        RolloutConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Source of the costs fed to the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Simulated finite-horizon costs.
    Rollout,
    /// Sphere smoothing applied to the exact infinite-horizon cost.
    ExactCost,
    /// Exact gradients and state correlations, no sampling.
    ExactGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[serde(alias = "pg")]
    PolicyGradient,
    #[serde(alias = "npg")]
    NaturalGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSigmaEstimate {
    pub grad_hat: Mat,
    pub sigma_hat: Mat,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// `c_t = x_tᵀ(Q + KᵀRᵘK − LᵀRᵛL)x_t` for `t = 0..horizon`.
    pub costs: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Rollout {
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// `Σ_t x_t x_tᵀ`.
    pub fn state_sum(&self) -> Mat {
        let m = self.states.first().map_or(0, |x| x.len());
        self.states
            .iter()
            .fold(Mat::zeros(m, m), |acc, x| acc + x * x.transpose())
    }
}

/// SplitMix64 finalizer over `(seed, a, b)`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for sample `index` of an estimate seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw from the Frobenius sphere of radius `r` in `rows × cols` matrices.
pub fn sample_sphere(rows: usize, cols: usize, r: f64, rng: &mut ChaCha8Rng) -> Mat {
    loop {
        let g = Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
        let norm = g.norm();
        if norm > 0.0 {
            return g * (r / norm);
        }
    }
}

fn draw_state(chol: &Mat, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(chol.ncols(), |_, _| StandardNormal.sample(rng));
    chol * z
}

fn rollout_from(
    spec: &GameSpec,
    k: &Mat,
    l: &Mat,
    horizon: usize,
    x0: DVector<f64>,
) -> Result<Rollout> {
    let acl = spec.closed_loop(k, l)?;
    let w = spec.stage_weight(k, l)?;
    let mut costs = Vec::with_capacity(horizon);
    let mut states = Vec::with_capacity(horizon);
    let mut x = x0;
    for _ in 0..horizon {
        costs.push(x.dot(&(&w * &x)));
        let next = &acl * &x;
        states.push(x);
        x = next;
    }
    Ok(Rollout { costs, states })
}

/// Simulates `x_{t+1} = (A − BK − DL)x_t` from `x₀ ~ N(0, init_cov)`.
///
/// Unstable closed loops are simulated as is; overflow shows up as
/// non-finite costs.
pub fn simulate(
    spec: &GameSpec,
    k: &Mat,
    l: &Mat,
    horizon: usize,
    init_cov: &Mat,
    seed: u64,
) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = draw_state(&psd_sqrt(init_cov), &mut rng);
    rollout_from(spec, k, l, horizon, x0)
}

/// One-point smoothing estimate around `center`.
///
/// `oracle` receives the perturbed point and the sample's generator (already
/// advanced past the perturbation draw) and returns a cost and a state
/// correlation sample. Returns `(d̃/r²)·mean(Cᵢ Uᵢ)` and the mean correlation.
pub fn one_point_estimate<F>(
    center: &Mat,
    m_traj: usize,
    radius: f64,
    seed: u64,
    oracle: F,
) -> Result<GradSigmaEstimate>
where
    F: Fn(&Mat, &mut ChaCha8Rng) -> Result<(f64, Mat)> + Sync,
{
    if m_traj == 0 || radius.is_nan() || radius <= 0.0 {
        return Err(Error::Domain("m_traj and radius must be positive".into()));
    }
    let (rows, cols) = center.shape();
    let dim = (rows * cols) as f64;
    let samples: Vec<(Mat, Mat)> = (0..m_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i as u64);
            let u = sample_sphere(rows, cols, radius, &mut rng);
            let (c, sigma) = oracle(&(center + &u), &mut rng)?;
            Ok((u * (c * dim / (radius * radius)), sigma))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let sigma_dim = samples[0].1.nrows();
    let (g, s) = samples.into_iter().fold(
        (Mat::zeros(rows, cols), Mat::zeros(sigma_dim, sigma_dim)),
        |(g, s), (gi, si)| (g + gi, s + si),
    );
    let grad_hat = g / n;
    if grad_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("non-finite gradient estimate".into()));
    }
    Ok(GradSigmaEstimate {
        grad_hat,
        sigma_hat: symmetrize(&(s / n)),
        n_samples: m_traj,
    })
}

/// Estimates `∇_L C(K, L)` and `Σ_{K,L}` at fixed `K`.
pub fn est(
    spec: &GameSpec,
    k: &Mat,
    l: &Mat,
    cfg: &RolloutConfig,
    mode: EstimatorMode,
) -> Result<GradSigmaEstimate> {
    cfg.validate()?;
    spec.check_gains(k, l)?;
    match mode {
        EstimatorMode::ExactGradient => Ok(GradSigmaEstimate {
            grad_hat: grad_l(spec, k, l)?,
            sigma_hat: state_correlation(spec, k, l)?,
            n_samples: 0,
        }),
        EstimatorMode::ExactCost => {
            one_point_estimate(l, cfg.m_traj, cfg.radius, cfg.seed, |lp, _| {
                Ok((game_value(spec, k, lp)?.1, state_correlation(spec, k, lp)?))
            })
        }
        EstimatorMode::Rollout => {
            let chol = psd_sqrt(&cfg.init_cov);
            one_point_estimate(l, cfg.m_traj, cfg.radius, cfg.seed, |lp, rng| {
                let x0 = draw_state(&chol, rng);
                let r = rollout_from(spec, k, lp, cfg.horizon, x0)?;
                Ok((r.total_cost(), r.state_sum()))
            })
        }
    }
}

/// `g·(Σ + 1e-8·tr(Σ)/m·I)⁻¹`.
fn natural_direction(g: &Mat, sigma: &Mat) -> Result<Mat> {
    let m = sigma.nrows();
    let reg = sigma + Mat::identity(m, m) * (1e-8 * sigma.trace() / m as f64);
    let chol = symmetrize(&reg)
        .cholesky()
        .ok_or_else(|| Error::Estimation("state correlation estimate is singular".into()))?;
    Ok(chol.solve(&g.transpose()).transpose())
}

/// Maximizer ascent `L ← L + α·ĝ` (PG) or `L ← L + α·ĝΣ̂⁻¹` (NPG) at fixed `K`.
#[allow(clippy::too_many_arguments)]
pub fn inner_ng(
    spec: &GameSpec,
    k: &Mat,
    l0: &Mat,
    cfg: &RolloutConfig,
    n_iter: usize,
    alpha: f64,
    variant: Variant,
    mode: EstimatorMode,
) -> Result<Mat> {
    spec.check_gains(k, l0)?;
    if alpha == 0.0 {
        return Ok(l0.clone());
    }
    let mut l = l0.clone();
    for tau in 0..n_iter {
        let e = est(
            spec,
            k,
            &l,
            &cfg.reseeded(derive_seed(cfg.seed, 1, tau as u64)),
            mode,
        )?;
        let dir = match variant {
            Variant::PolicyGradient => e.grad_hat,
            Variant::NaturalGradient => natural_direction(&e.grad_hat, &e.sigma_hat)?,
        };
        l += dir * alpha;
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub k: Mat,
    /// `C(K, L(K))` from the model, `NaN` when `K` is outside the feasible set.
    pub exact_cost: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTrace {
    pub records: Vec<OuterRecord>,
}

impl OuterTrace {
    pub fn final_k(&self) -> Option<&Mat> {
        self.records.last().map(|r| &r.k)
    }

    pub fn all_feasible(&self) -> bool {
        self.records.iter().all(|r| r.feasible)
    }
}

fn record(spec: &GameSpec, k: &Mat, iteration: usize) -> OuterRecord {
    let exact = spectral_radius(&(&spec.a - &spec.b * k))
        .ok()
        .filter(|&rho| rho < 1.0)
        .and_then(|_| best_response_l(spec, k).ok())
        .and_then(|(l, _)| game_value(spec, k, &l).ok());
    OuterRecord {
        iteration,
        k: k.clone(),
        exact_cost: exact.as_ref().map_or(f64::NAN, |v| v.1),
        feasible: exact.is_some(),
    }
}

/// Minimizer descent `K ← K − η·ĝ` (PG) or `K ← K − η·ĝΣ̂⁻¹` (NPG), with the
/// maximizer's response approximated by [`inner_ng`] from a cold start `L = 0`.
///
/// The trace holds `K₀, …, K_{n_outer}`. Iteration stops early, with the
/// offending iterate recorded, if `K` leaves the feasible set.
#[allow(clippy::too_many_arguments)]
pub fn outer_ng(
    spec: &GameSpec,
    k0: &Mat,
    cfg: &RolloutConfig,
    n_outer: usize,
    n_inner: usize,
    eta: f64,
    alpha: f64,
    variant: Variant,
    mode: EstimatorMode,
) -> Result<OuterTrace> {
    cfg.validate()?;
    let l_zero = Mat::zeros(spec.d.ncols(), spec.n_states());
    spec.check_gains(k0, &l_zero)?;
    let mut k = k0.clone();
    let mut records = vec![record(spec, &k, 0)];
    if !records[0].feasible {
        return Err(Error::infeasible(
            "initial gain outside the game-feasible set",
            f64::NAN,
        ));
    }
    for t in 0..n_outer {
        let outer_seed = derive_seed(cfg.seed, 2, t as u64);
        let (g, sigma) = match mode {
            EstimatorMode::ExactGradient => {
                let l = inner_ng(spec, &k, &l_zero, cfg, n_inner, alpha, variant, mode)?;
                (grad_k(spec, &k, &l)?, state_correlation(spec, &k, &l)?)
            }
            EstimatorMode::ExactCost | EstimatorMode::Rollout => {
                let chol = psd_sqrt(&cfg.init_cov);
                let e = one_point_estimate(&k, cfg.m_traj, cfg.radius, outer_seed, |kp, rng| {
                    let inner_cfg =
                        cfg.reseeded(derive_seed(outer_seed, 3, rand::Rng::random(rng)));
                    let l = inner_ng(spec, kp, &l_zero, &inner_cfg, n_inner, alpha, variant, mode)?;
                    match mode {
                        EstimatorMode::ExactCost => Ok((
                            game_value(spec, kp, &l)?.1,
                            state_correlation(spec, kp, &l)?,
                        )),
                        _ => {
                            let x0 = draw_state(&chol, rng);
                            let r = rollout_from(spec, kp, &l, cfg.horizon, x0)?;
                            Ok((r.total_cost(), r.state_sum()))
                        }
                    }
                })?;
                (e.grad_hat, e.sigma_hat)
            }
        };
        let dir = match variant {
            Variant::PolicyGradient => g,
            Variant::NaturalGradient => natural_direction(&g, &sigma)?,
        };
        k -= dir * eta;
        let rec = record(spec, &k, t + 1);
        let feasible = rec.feasible;
        records.push(rec);
        if !feasible {
            break;
        }
    }
    Ok(OuterTrace { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec2() -> GameSpec {
        let a = Mat::from_row_slice(2, 2, &[0.6, 0.2, 0.0, 0.5]);
        let i = Mat::identity(2, 2);
        GameSpec::new(a, i.clone(), &i * 0.5, i.clone(), i.clone(), &i * 4.0, i).unwrap()
    }

    #[test]
    fn single_step_cost() {
        let spec = GameSpec::new(
            Mat::zeros(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
        )
        .unwrap();
        let z = Mat::zeros(2, 2);
        let r = simulate(&spec, &z, &z, 1, &Mat::identity(2, 2), 5).unwrap();
        let x = &r.states[0];
        assert_eq!(r.costs.len(), 1);
        assert_relative_eq!(r.costs[0], x.dot(&(&spec.q * x)), epsilon = 1e-14);
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = spec2();
        let k = Mat::identity(2, 2) * 0.1;
        let l = Mat::zeros(2, 2);
        let a = simulate(&spec, &k, &l, 20, &Mat::identity(2, 2), 11).unwrap();
        let b = simulate(&spec, &k, &l, 20, &Mat::identity(2, 2), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sphere_radius() {
        let mut rng = trajectory_rng(3, 0);
        for _ in 0..100 {
            let u = sample_sphere(2, 3, 0.7, &mut rng);
            assert!((u.norm() - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_oracle_formula() {
        let center = Mat::zeros(2, 2);
        let e =
            one_point_estimate(&center, 1, 0.5, 9, |_, _| Ok((3.0, Mat::identity(2, 2)))).unwrap();
        let u = sample_sphere(2, 2, 0.5, &mut trajectory_rng(9, 0));
        assert_relative_eq!(e.grad_hat, u * (4.0 / 0.25 * 3.0), epsilon = 1e-12);
    }

    #[test]
    fn zero_stepsize_is_identity() {
        let spec = spec2();
        let cfg = RolloutConfig {
            m_traj: 4,
            horizon: 10,
            radius: 0.1,
            seed: 1,
            init_cov: Mat::identity(2, 2),
        };
        let k = Mat::identity(2, 2) * 0.2;
        let l0 = Mat::from_row_slice(2, 2, &[0.01, 0.0, 0.0, -0.02]);
        let out = inner_ng(
            &spec,
            &k,
            &l0,
            &cfg,
            5,
            0.0,
            Variant::NaturalGradient,
            EstimatorMode::Rollout,
        )
        .unwrap();
        assert_eq!(out, l0);
        let trace = outer_ng(
            &spec,
            &k,
            &cfg,
            3,
            2,
            0.0,
            0.01,
            Variant::NaturalGradient,
            EstimatorMode::ExactGradient,
        )
        .unwrap();
        assert!(trace.records.iter().all(|r| r.k == k));
    }

    #[test]
    fn seeds_spread() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_ne!(derive_seed(1, 0, 0), derive_seed(2, 0, 0));
    }
}
