//! Model-based policy optimization: costs, gradients, the three update rules
//! and an iteration driver that certifies every iterate.
//!
//! Discrete updates (with `E_K = (R+BᵀP̃B)K − BᵀP̃A`):
//!
//! ```text
//! PG:  K ← K − η·2E_KΔ_K
//! NPG: K ← K − 2ηE_K
//! GN:  K ← K − 2η(R+BᵀP̃B)⁻¹E_K
//! ```
//!
//! Continuous updates replace `E_K` by `RK − BᵀP` and `(R+BᵀP̃B)` by `R`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{
    inverse, lambda_max, solve, solve_clyap, solve_dlyap, spd_inverse, spectral_norm, symmetrize,
    Mat,
};
use crate::norms::{hinf_bisect, membership, MembershipReason, DEFAULT_BISECT_TOL};
use crate::plant::{Plant, TimeDomain};
use crate::riccati::RiccatiCertificate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    #[serde(alias = "pg")]
    PolicyGradient,
    #[serde(alias = "npg")]
    NaturalGradient,
    #[serde(alias = "gn")]
    GaussNewton,
}

impl std::fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateKind::PolicyGradient => "pg",
            UpdateKind::NaturalGradient => "npg",
            UpdateKind::GaussNewton => "gn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepsize {
    Fixed(f64),
    /// `1/(2‖R+BᵀP̃B‖)` (NPG, discrete), `1/(2‖R‖)` (NPG, continuous), `1/2` (GN).
    Theorem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    /// `tr(PDDᵀ)`
    J1Trace,
    /// `−γ² log det(I − γ⁻²DᵀPD)`
    J2LogDet,
    /// `tr[DᵀP(I − γ⁻²DDᵀP)⁻¹D]`
    J3TraceInv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// `‖E_K‖²_F ≤ tol` for NPG/GN, `‖∇J‖²_F ≤ tol` for PG.
    GradientNorm,
    /// `J(K) − j_star < tol`.
    CostGap { j_star: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: UpdateKind,
    pub stepsize: Stepsize,
    pub cost_form: CostForm,
    pub tol: f64,
    pub max_iter: usize,
    pub stop: StopRule,
    /// Evaluate the theorem stepsize once at `K0` instead of every iterate.
    pub freeze_theorem_stepsize: bool,
    /// PG only: halve `η` (at most 60 times) when a step leaves the feasible
    /// set. Such runs are outside any convergence guarantee.
    pub backtracking: bool,
    /// Record `‖T(K)‖_∞` every this many iterations; 0 disables it.
    pub hinf_every: usize,
}

impl OptimizerConfig {
    pub fn new(kind: UpdateKind, stepsize: Stepsize) -> Self {
        OptimizerConfig {
            kind,
            stepsize,
            cost_form: CostForm::J1Trace,
            tol: 1e-12,
            max_iter: 10_000,
            stop: StopRule::GradientNorm,
            freeze_theorem_stepsize: false,
            backtracking: false,
            hinf_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    /// Discrete `(R+BᵀP̃B)K − BᵀP̃A`; continuous `RK − BᵀP`.
    pub e_k: Mat,
    /// `Δ_K` (discrete) or `Λ_K` (continuous).
    pub weight: Mat,
    pub grad: Mat,
    pub certificate: RiccatiCertificate,
}

/// Certificate of `K`, or the error explaining why `K` is outside the set.
pub fn certified(plant: &Plant, k: &Mat, domain: TimeDomain) -> Result<RiccatiCertificate> {
    plant.check_gain(k)?;
    let cert = membership(plant, k, domain);
    match (cert.reason, cert.riccati) {
        (MembershipReason::Ok, Some(c)) => Ok(c),
        (MembershipReason::Unstable, _) => {
            let acl = plant.closed_loop(k)?;
            let metric = match domain {
                TimeDomain::Discrete => crate::matlin::spectral_radius(&acl)?,
                TimeDomain::Continuous => crate::matlin::max_real_eig(&acl)?,
            };
            Err(Error::Unstable { metric })
        }
        (_, c) => Err(Error::infeasible(
            "H-infinity constraint violated",
            c.map_or(f64::NAN, |c| c.brl_margin),
        )),
    }
}

fn gamma_sq(plant: &Plant) -> f64 {
    plant.gamma * plant.gamma
}

/// Cost functional of a certified `P_K`. Continuous plants always use `tr(PDDᵀ)`.
pub fn cost_from_certificate(
    plant: &Plant,
    cert: &RiccatiCertificate,
    form: CostForm,
    domain: TimeDomain,
) -> Result<f64> {
    let p = &cert.p;
    let d = &plant.d;
    let n = plant.n_disturbances();
    let form = match domain {
        TimeDomain::Continuous => CostForm::J1Trace,
        TimeDomain::Discrete => form,
    };
    match form {
        CostForm::J1Trace => Ok((p * plant.dd()).trace()),
        CostForm::J2LogDet => {
            let s = Mat::identity(n, n) - d.transpose() * p * d / gamma_sq(plant);
            let chol = symmetrize(&s)
                .cholesky()
                .ok_or_else(|| Error::infeasible("attenuation margin lost", cert.brl_margin))?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            Ok(-gamma_sq(plant) * log_det)
        }
        CostForm::J3TraceInv => {
            let m = plant.n_states();
            let s = Mat::identity(m, m) - plant.dd() * p / gamma_sq(plant);
            Ok((d.transpose() * p * solve(&s, d)?).trace())
        }
    }
}

/// Cost `J(K)` of a gain in the feasible set.
pub fn cost(plant: &Plant, k: &Mat, form: CostForm, domain: TimeDomain) -> Result<f64> {
    let cert = certified(plant, k, domain)?;
    cost_from_certificate(plant, &cert, form, domain)
}

/// Builds `E_K`, `Δ_K`/`Λ_K` and the policy gradient from a certificate.
///
/// The discrete gradient is that of the log-det cost; the continuous one is
/// that of `tr(PDDᵀ)`.
pub fn gradient_from_certificate(
    plant: &Plant,
    k: &Mat,
    cert: RiccatiCertificate,
    domain: TimeDomain,
) -> Result<GradientBundle> {
    let acl = plant.closed_loop(k)?;
    let p = &cert.p;
    match domain {
        TimeDomain::Discrete => {
            let pt = &cert.p_tilde;
            let btp = plant.b.transpose() * pt;
            let e_k = (&plant.r + &btp * &plant.b) * k - btp * &plant.a;
            let m = plant.n_states();
            let n = plant.n_disturbances();
            let g2 = gamma_sq(plant);
            let shrink = Mat::identity(m, m) - plant.dd() * p / g2;
            let abar = solve(&shrink, &acl)?;
            let inner = Mat::identity(n, n) - plant.d.transpose() * p * &plant.d / g2;
            let forcing = symmetrize(&(&plant.d * solve(&inner, &plant.d.transpose())?));
            let delta = solve_dlyap(&abar.transpose(), &forcing)?;
            let grad = &e_k * &delta * 2.0;
            Ok(GradientBundle {
                e_k,
                weight: delta,
                grad,
                certificate: cert,
            })
        }
        TimeDomain::Continuous => {
            let e_k = &plant.r * k - plant.b.transpose() * p;
            let abar = acl + plant.dd() * p / gamma_sq(plant);
            let lambda = solve_clyap(&abar.transpose(), &plant.dd())?;
            let grad = &e_k * &lambda * 2.0;
            Ok(GradientBundle {
                e_k,
                weight: lambda,
                grad,
                certificate: cert,
            })
        }
    }
}

pub fn gradient_bundle(plant: &Plant, k: &Mat, domain: TimeDomain) -> Result<GradientBundle> {
    let cert = certified(plant, k, domain)?;
    gradient_from_certificate(plant, k, cert, domain)
}

/// Curvature matrix `R + BᵀP̃B` (discrete) or `R` (continuous).
fn curvature(plant: &Plant, cert: &RiccatiCertificate, domain: TimeDomain) -> Mat {
    match domain {
        TimeDomain::Discrete => {
            symmetrize(&(&plant.r + plant.b.transpose() * &cert.p_tilde * &plant.b))
        }
        TimeDomain::Continuous => plant.r.clone(),
    }
}

/// Stepsize prescribed by the implicit-regularization theorems.
pub fn theorem_stepsize(
    plant: &Plant,
    cert: &RiccatiCertificate,
    kind: UpdateKind,
    domain: TimeDomain,
) -> Result<f64> {
    match kind {
        UpdateKind::NaturalGradient => Ok(0.5 / spectral_norm(&curvature(plant, cert, domain))),
        UpdateKind::GaussNewton => Ok(0.5),
        UpdateKind::PolicyGradient => Err(Error::Domain(
            "no theorem stepsize exists for the vanilla policy gradient".into(),
        )),
    }
}

/// Raw update `K − η·direction` for a given bundle.
pub fn apply_update(
    plant: &Plant,
    k: &Mat,
    bundle: &GradientBundle,
    kind: UpdateKind,
    eta: f64,
    domain: TimeDomain,
) -> Result<Mat> {
    let dir = match kind {
        UpdateKind::PolicyGradient => bundle.grad.clone(),
        UpdateKind::NaturalGradient => &bundle.e_k * 2.0,
        UpdateKind::GaussNewton => {
            let h = curvature(plant, &bundle.certificate, domain);
            let hinv = spd_inverse(&h).map_or_else(|| inverse(&h), Ok)?;
            hinv * &bundle.e_k * 2.0
        }
    };
    Ok(k - dir * eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub k_next: Mat,
    pub eta: f64,
    /// Whether `k_next` lies in the feasible set.
    pub feasible: bool,
    pub halvings: usize,
}

fn resolve_eta(
    plant: &Plant,
    cert: &RiccatiCertificate,
    config: &OptimizerConfig,
    domain: TimeDomain,
) -> Result<f64> {
    match config.stepsize {
        Stepsize::Fixed(eta) if eta.is_finite() && eta >= 0.0 => Ok(eta),
        Stepsize::Fixed(eta) => Err(Error::Domain(format!("invalid stepsize {eta}"))),
        Stepsize::Theorem => theorem_stepsize(plant, cert, config.kind, domain),
    }
}

/// One update from a certified `K`; reports (rather than fails on) a step that
/// leaves the feasible set.
pub fn step(
    plant: &Plant,
    k: &Mat,
    config: &OptimizerConfig,
    domain: TimeDomain,
) -> Result<StepResult> {
    let bundle = gradient_bundle(plant, k, domain)?;
    let eta = resolve_eta(plant, &bundle.certificate, config, domain)?;
    step_with(plant, k, &bundle, config, eta, domain)
}

fn step_with(
    plant: &Plant,
    k: &Mat,
    bundle: &GradientBundle,
    config: &OptimizerConfig,
    eta: f64,
    domain: TimeDomain,
) -> Result<StepResult> {
    let mut eta = eta;
    let mut halvings = 0;
    loop {
        let k_next = apply_update(plant, k, bundle, config.kind, eta, domain)?;
        let feasible = membership(plant, &k_next, domain).in_set;
        let may_backtrack = config.backtracking && config.kind == UpdateKind::PolicyGradient;
        if feasible || !may_backtrack || halvings == 60 {
            return Ok(StepResult {
                k_next,
                eta,
                feasible,
                halvings,
            });
        }
        eta *= 0.5;
        halvings += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    /// `‖E_K‖²_F` (discrete) or `‖RK − BᵀP‖²_F` (continuous).
    pub grad_norm_sq: f64,
    /// `‖∇J(K)‖²_F`.
    pub policy_grad_norm_sq: f64,
    pub hinf: Option<f64>,
    pub brl_margin: f64,
    pub eta: f64,
    pub k: Mat,
    pub p: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// A step left the feasible set; the offending iterate is not recorded.
    FeasibilityViolation {
        iteration: usize,
    },
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl IterationTrace {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn final_k(&self) -> Option<&Mat> {
        self.records.last().map(|r| &r.k)
    }
}

/// Runs the configured update from a certified `K0`.
///
/// Record `n` describes iterate `Kₙ`; the trace holds `K0` and every accepted
/// iterate up to the stopping point. `max_iter = 0` returns an empty trace.
pub fn run_optimizer(
    plant: &Plant,
    k0: &Mat,
    config: &OptimizerConfig,
    domain: TimeDomain,
) -> Result<IterationTrace> {
    run_optimizer_observed(plant, k0, config, domain, |_| {})
}

/// [`run_optimizer`] calling `observe` on each record as soon as it is made.
pub fn run_optimizer_observed(
    plant: &Plant,
    k0: &Mat,
    config: &OptimizerConfig,
    domain: TimeDomain,
    mut observe: impl FnMut(&IterationRecord),
) -> Result<IterationTrace> {
    if config.tol.is_nan() || config.tol < 0.0 {
        return Err(Error::Domain("tol must be nonnegative".into()));
    }
    let mut cert = certified(plant, k0, domain)?;
    if config.max_iter == 0 {
        return Ok(IterationTrace {
            records: Vec::new(),
            termination: Termination::NotRun,
        });
    }
    let mut k = k0.clone();
    let mut frozen_eta = None;
    let mut records = Vec::new();
    let mut iteration = 0;
    loop {
        let bundle = gradient_from_certificate(plant, &k, cert, domain)?;
        let cost = cost_from_certificate(plant, &bundle.certificate, config.cost_form, domain)?;
        let eta = match frozen_eta {
            Some(eta) => eta,
            None => {
                let eta = resolve_eta(plant, &bundle.certificate, config, domain)?;
                if config.freeze_theorem_stepsize {
                    frozen_eta = Some(eta);
                }
                eta
            }
        };
        let hinf = if config.hinf_every > 0 && iteration % config.hinf_every == 0 {
            Some(hinf_bisect(plant, &k, domain, DEFAULT_BISECT_TOL)?.value)
        } else {
            None
        };
        let grad_norm_sq = bundle.e_k.norm_squared();
        let policy_grad_norm_sq = bundle.grad.norm_squared();
        records.push(IterationRecord {
            iteration,
            cost,
            grad_norm_sq,
            policy_grad_norm_sq,
            hinf,
            brl_margin: bundle.certificate.brl_margin,
            eta,
            k: k.clone(),
            p: bundle.certificate.p.clone(),
        });
        observe(&records[records.len() - 1]);
        let done = match config.stop {
            StopRule::GradientNorm => match config.kind {
                UpdateKind::PolicyGradient => policy_grad_norm_sq <= config.tol,
                _ => grad_norm_sq <= config.tol,
            },
            StopRule::CostGap { j_star } => cost - j_star < config.tol,
        };
        if done {
            return Ok(IterationTrace {
                records,
                termination: Termination::Converged,
            });
        }
        if iteration >= config.max_iter {
            return Ok(IterationTrace {
                records,
                termination: Termination::MaxIterations,
            });
        }
        let next = step_with(plant, &k, &bundle, config, eta, domain)?;
        iteration += 1;
        match certified(plant, &next.k_next, domain) {
            Ok(c) if next.feasible => {
                cert = c;
                k = next.k_next;
            }
            _ => {
                return Ok(IterationTrace {
                    records,
                    termination: Termination::FeasibilityViolation { iteration },
                })
            }
        }
    }
}

/// Rejection-samples a stabilizing gain with entries uniform on `[−w, w]`.
///
/// With `gamma_slack = Some(s)` the returned `γ` is `(1+s)·‖T(K0)‖_∞`;
/// otherwise the plant's `γ` is kept and the draw must lie in the feasible set.
pub fn find_feasible_init(
    plant: &Plant,
    domain: TimeDomain,
    box_half_width: f64,
    gamma_slack: Option<f64>,
    max_tries: usize,
    seed: u64,
) -> Result<(Mat, f64)> {
    if !(box_half_width >= 0.0 && box_half_width.is_finite()) {
        return Err(Error::Domain(
            "box half-width must be finite and nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, m) = (plant.n_inputs(), plant.n_states());
    for _ in 0..max_tries {
        let k = Mat::from_fn(d, m, |_, _| {
            if box_half_width == 0.0 {
                0.0
            } else {
                rng.random_range(-box_half_width..=box_half_width)
            }
        });
        let cert = membership(plant, &k, domain);
        if !cert.stabilizing {
            continue;
        }
        match gamma_slack {
            Some(slack) => {
                let norm = hinf_bisect(plant, &k, domain, DEFAULT_BISECT_TOL * 1e-3)?.value;
                let gamma = (1.0 + slack) * norm;
                if gamma > 0.0 && membership(&plant.with_gamma(gamma)?, &k, domain).in_set {
                    return Ok((k, gamma));
                }
            }
            None if cert.in_set => return Ok((k, plant.gamma)),
            None => {}
        }
    }
    Err(Error::SearchFailed { tries: max_tries })
}

/// `λ_max(P_next − P)`, the matrix-monotonicity defect between two iterates.
pub fn monotonicity_defect(p: &Mat, p_next: &Mat) -> f64 {
    lambda_max(&symmetrize(&(p_next - p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::riccati::solve_optimal_modified_riccati;
    use approx::assert_relative_eq;

    #[test]
    fn zero_value_costs() {
        let s = |v: f64| Mat::from_element(1, 1, v);
        let p = Plant::from_weights(s(0.5), s(1.0), s(1.0), s(0.0), s(1.0), 2.0).unwrap();
        for form in [CostForm::J1Trace, CostForm::J2LogDet, CostForm::J3TraceInv] {
            assert_eq!(cost(&p, &s(0.0), form, TimeDomain::Discrete).unwrap(), 0.0);
        }
    }

    #[test]
    fn large_gamma_j2_matches_trace() {
        let p = cases::case2().with_gamma(1e6).unwrap();
        let k = Mat::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.0]);
        let j1 = cost(&p, &k, CostForm::J1Trace, TimeDomain::Discrete).unwrap();
        let j2 = cost(&p, &k, CostForm::J2LogDet, TimeDomain::Discrete).unwrap();
        assert_relative_eq!(j1, j2, max_relative = 1e-4);
    }

    #[test]
    fn optimum_is_stationary() {
        let p = cases::case2();
        let (_, k) = solve_optimal_modified_riccati(&p, 1e-14, 100_000).unwrap();
        let g = gradient_bundle(&p, &k, TimeDomain::Discrete).unwrap();
        assert!(g.e_k.norm() < 1e-8);
    }

    #[test]
    fn gauss_newton_half_is_policy_iteration() {
        let p = cases::case2();
        let k = Mat::from_row_slice(2, 2, &[1.4, 0.3, -0.2, 0.1]);
        let cfg = OptimizerConfig::new(UpdateKind::GaussNewton, Stepsize::Theorem);
        let out = step(&p, &k, &cfg, TimeDomain::Discrete).unwrap();
        let cert = certified(&p, &k, TimeDomain::Discrete).unwrap();
        let btp = p.b.transpose() * &cert.p_tilde;
        let expected = solve(&(&p.r + &btp * &p.b), &(btp * &p.a)).unwrap();
        assert_relative_eq!(out.k_next, expected, epsilon = 1e-12);
    }

    #[test]
    fn theorem_stepsize_undefined_for_pg() {
        let p = cases::case2();
        let k = Mat::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.0]);
        let cfg = OptimizerConfig::new(UpdateKind::PolicyGradient, Stepsize::Theorem);
        assert!(matches!(
            step(&p, &k, &cfg, TimeDomain::Discrete),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn zero_iterations_not_run() {
        let p = cases::case2();
        let k = Mat::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.0]);
        let mut cfg = OptimizerConfig::new(UpdateKind::NaturalGradient, Stepsize::Theorem);
        cfg.max_iter = 0;
        let trace = run_optimizer(&p, &k, &cfg, TimeDomain::Discrete).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(trace.termination, Termination::NotRun);
    }

    #[test]
    fn infeasible_start_rejected() {
        let p = cases::nonconvex_discrete();
        let (_, _, k3) = cases::nonconvex_discrete_gains();
        let cfg = OptimizerConfig::new(UpdateKind::GaussNewton, Stepsize::Theorem);
        assert!(matches!(
            run_optimizer(&p, &k3, &cfg, TimeDomain::Discrete),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn zero_dynamics_accepts_first_draw() {
        let p = Plant::from_weights(
            Mat::zeros(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2) * 0.1,
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            10.0,
        )
        .unwrap();
        let (k, g) = find_feasible_init(&p, TimeDomain::Discrete, 0.01, None, 1, 7).unwrap();
        assert!(k.amax() <= 0.01);
        assert_eq!(g, 10.0);
    }
}
