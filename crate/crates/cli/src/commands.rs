use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mixedpo::cases::{self, CASE_NAMES};
use mixedpo::lqgame::{gare_residual, solve_gare, GameSpec};
use mixedpo::norms::{hinf_bisect, hinf_grid, membership, DEFAULT_BISECT_TOL};
use mixedpo::polgrad::{find_feasible_init, run_optimizer_observed, IterationTrace, Termination};
use mixedpo::riccati::{optimal_gain, DISCRETE_MAX_ITER};
use mixedpo::zeroth::{outer_ng, EstimatorMode, RolloutConfig, Variant};
use mixedpo::{Error, Mat, Plant, TimeDomain};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{matrix, CaseName, ConfigError, ExperimentConfig};

pub const GRID_POINTS: usize = 8192;
pub const GRID_CHECK_TOL: f64 = 1e-3;
pub const GAME_MATCH_TOL: f64 = 1e-6;
const CASE1_GAMMA_SLACK: f64 = 1e-5;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: e.0,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Dimension(_) | Error::Domain(_) => EXIT_CONFIG,
            Error::Unstable { .. } | Error::Infeasible { .. } | Error::SearchFailed { .. } => {
                EXIT_INFEASIBLE
            }
            Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

pub type CmdResult = Result<(), Failure>;

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn write_json(path: &Path, value: &Value) -> CmdResult {
    let text = serde_json::to_string_pretty(value).expect("json value");
    std::fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

/// Prints to stdout, ignoring a closed pipe.
fn print_json(value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("json value");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn emit(value: &Value, out: Option<&Path>) -> CmdResult {
    print_json(value);
    match out {
        Some(path) => write_json(path, value),
        None => Ok(()),
    }
}

/// Plant and initial gain of one trial.
///
/// An explicit `init.k0` is used as given. Otherwise a gain is drawn from the
/// configured box. Case 1 without a configured `γ` takes
/// `γ = (1+slack)·‖T(K0)‖_∞` from its initial gain.
pub fn trial_setup(cfg: &ExperimentConfig, seed: u64) -> Result<(Plant, Mat), Failure> {
    let base = cfg.plant()?;
    let domain = cfg.domain();
    let slack = cfg.init.gamma_slack.or(match (cfg.case, cfg.gamma) {
        (CaseName::Case1, None) => Some(CASE1_GAMMA_SLACK),
        _ => None,
    });
    if let Some(spec) = &cfg.init.k0 {
        let k0 = cfg.resolve_gain(spec, &base)?;
        let plant = match slack {
            Some(s) => {
                let norm = hinf_bisect(&base, &k0, domain, DEFAULT_BISECT_TOL * 1e-3)?.value;
                base.with_gamma((1.0 + s) * norm)?
            }
            None => base,
        };
        return Ok((plant, k0));
    }
    let box_half_width = cfg.init.box_half_width.unwrap_or(match cfg.case {
        CaseName::Case1 => 0.25,
        CaseName::Case2 => 3.0,
        _ => 1.0,
    });
    let tries = cfg.init.max_tries.unwrap_or(match cfg.case {
        CaseName::Case3 => 10_000_000,
        _ => 1_000_000,
    });
    let (k0, gamma) = find_feasible_init(&base, domain, box_half_width, slack, tries, seed)?;
    Ok((base.with_gamma(gamma)?, k0))
}

pub fn hinf(cfg: &ExperimentConfig, out: Option<&Path>) -> CmdResult {
    let plant = cfg.plant()?;
    let domain = cfg.domain();
    let k = cfg.gain(&plant)?;
    let bisect = hinf_bisect(&plant, &k, domain, DEFAULT_BISECT_TOL * 1e-3)?;
    let grid = hinf_grid(&plant, &k, domain, GRID_POINTS)?;
    let delta = (grid.value - bisect.value).abs();
    println!("case {} ({domain})", cfg.case.as_str());
    println!("hinf bisection {:.6}", bisect.value);
    println!("hinf grid      {:.6} ({GRID_POINTS} points)", grid.value);
    println!(
        "check |grid - bisection| = {delta:.3e} {} {GRID_CHECK_TOL:e}",
        if delta <= GRID_CHECK_TOL { "<=" } else { ">" }
    );
    if let Some(path) = out {
        write_json(
            path,
            &json!({
                "case": cfg.case.as_str(),
                "time_domain": domain,
                "bisection": bisect,
                "grid": grid,
                "delta": delta,
            }),
        )?;
    }
    Ok(())
}

pub fn membership_cmd(cfg: &ExperimentConfig, out: Option<&Path>) -> CmdResult {
    let plant = cfg.plant()?;
    let domain = cfg.domain();
    let k = cfg.gain(&plant)?;
    let cert = membership(&plant, &k, domain);
    let ric = cert.riccati.as_ref();
    emit(
        &json!({
            "case": cfg.case.as_str(),
            "time_domain": domain,
            "gamma": plant.gamma,
            "in_set": cert.in_set,
            "stabilizing": cert.stabilizing,
            "reason": cert.reason,
            "brl_margin": ric.map(|r| r.brl_margin),
            "closedloop_radius": ric.map(|r| r.closedloop_radius),
            "P": ric.map(|r| rows(&r.p)),
        }),
        out,
    )
}

#[derive(Serialize)]
struct TraceRow {
    trial: usize,
    iteration: usize,
    cost: f64,
    grad_norm_sq: f64,
    hinf: Option<f64>,
    brl_margin: f64,
    wall_clock_seconds: f64,
}

struct TrialRun {
    trial: usize,
    seed: u64,
    plant: Plant,
    trace: IterationTrace,
    elapsed: Vec<f64>,
    k_star: Option<Mat>,
}

fn verdict(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIterations => "max-iterations",
        Termination::FeasibilityViolation { .. } => "feasibility-violation",
        Termination::NotRun => "not-run",
    }
}

fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialRun, Failure> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let (plant, k0) = trial_setup(cfg, seed)?;
    let domain = cfg.domain();
    let opt = cfg.algorithm.optimizer()?;
    let start = Instant::now();
    let mut elapsed = Vec::new();
    let trace = run_optimizer_observed(&plant, &k0, &opt, domain, |_| {
        elapsed.push(start.elapsed().as_secs_f64())
    })?;
    let k_star = optimal_gain(&plant, domain).ok().map(|(_, k)| k);
    Ok(TrialRun {
        trial,
        seed,
        plant,
        trace,
        elapsed,
        k_star,
    })
}

fn run_summary(cfg: &ExperimentConfig, run: &TrialRun) -> (Value, bool, bool) {
    let records = &run.trace.records;
    let last = records.last();
    let regularized = !matches!(
        run.trace.termination,
        Termination::FeasibilityViolation { .. }
    ) && records
        .iter()
        .all(|r| r.brl_margin > 0.0 && r.hinf.is_none_or(|h| h < run.plant.gamma));
    let distance = match (last, &run.k_star) {
        (Some(r), Some(k)) => Some((&r.k - k).norm()),
        _ => None,
    };
    let at_optimum = distance.is_some_and(|d| d <= cfg.algorithm.optimum_tol);
    let final_hinf = last.and_then(|r| {
        r.hinf.or_else(|| {
            hinf_bisect(&run.plant, &r.k, cfg.domain(), DEFAULT_BISECT_TOL)
                .ok()
                .map(|h| h.value)
        })
    });
    let value = json!({
        "case": cfg.case.as_str(),
        "algorithm": cfg.algorithm.kind.to_string(),
        "eta": records.first().map(|r| r.eta),
        "gamma": run.plant.gamma,
        "converged": run.trace.converged(),
        "final_cost": last.map(|r| r.cost),
        "final_hinf": final_hinf,
        "final_K": last.map(|r| rows(&r.k)),
        "iterations": records.len().saturating_sub(1),
        "seed": run.seed,
        "trial": run.trial,
        "verdict": verdict(run.trace.termination),
        "implicit_regularization": regularized,
        "distance_to_optimum": distance,
    });
    (value, regularized, at_optimum)
}

fn write_trace(path: &Path, runs: &[TrialRun]) -> CmdResult {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_failure(path, e))?;
    for run in runs {
        for (rec, &secs) in run.trace.records.iter().zip(&run.elapsed) {
            w.serialize(TraceRow {
                trial: run.trial,
                iteration: rec.iteration,
                cost: rec.cost,
                grad_norm_sq: rec.grad_norm_sq,
                hinf: rec.hinf,
                brl_margin: rec.brl_margin,
                wall_clock_seconds: secs,
            })
            .map_err(|e| io_failure(path, e))?;
        }
    }
    if runs.iter().all(|r| r.trace.records.is_empty()) {
        w.write_record([
            "trial",
            "iteration",
            "cost",
            "grad_norm_sq",
            "hinf",
            "brl_margin",
            "wall_clock_seconds",
        ])
        .map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

pub fn optimize(cfg: &ExperimentConfig, out: Option<&Path>) -> CmdResult {
    let runs = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(path) = out.or(cfg.output_path.as_deref()) {
        write_trace(path, &runs)?;
    }
    let mut per_run = Vec::with_capacity(runs.len());
    let (mut regularized, mut optimum) = (0, 0);
    for run in &runs {
        let (value, reg, opt) = run_summary(cfg, run);
        regularized += reg as usize;
        optimum += opt as usize;
        per_run.push(value);
    }
    let converged = runs.iter().filter(|r| r.trace.converged()).count();
    let summary = json!({
        "case": cfg.case.as_str(),
        "algorithm": cfg.algorithm.kind.to_string(),
        "seed": cfg.seed,
        "trials": runs.len(),
        "converged": converged == runs.len(),
        "converged_trials": converged,
        "optimum_trials": optimum,
        "implicit_regularization": regularized == runs.len(),
        "runs": per_run,
    });
    print_json(&summary);
    let violation = runs.iter().find(|r| {
        matches!(
            r.trace.termination,
            Termination::FeasibilityViolation { .. }
        )
    });
    if let Some(run) = violation {
        return Err(Failure {
            code: EXIT_INFEASIBLE,
            message: format!("trial {} left the feasible set", run.trial),
        });
    }
    if let Some(run) = runs
        .iter()
        .find(|r| r.trace.termination == Termination::MaxIterations)
    {
        return Err(Failure {
            code: EXIT_NONCONVERGENCE,
            message: format!("trial {} reached max_iter without converging", run.trial),
        });
    }
    Ok(())
}

fn discrete_only(cfg: &ExperimentConfig, what: &str) -> CmdResult {
    match cfg.domain() {
        TimeDomain::Discrete => Ok(()),
        TimeDomain::Continuous => {
            Err(ConfigError(format!("{what} needs a discrete-time case")).into())
        }
    }
}

/// Plant whose `γ` is fixed, drawing Case 1's `γ` from the seed when needed.
fn game_plant(cfg: &ExperimentConfig) -> Result<Plant, Failure> {
    match (cfg.case, cfg.gamma) {
        (CaseName::Case1, None) => Ok(trial_setup(cfg, cfg.seed)?.0),
        _ => Ok(cfg.plant()?),
    }
}

pub fn game(cfg: &ExperimentConfig, out: Option<&Path>) -> CmdResult {
    discrete_only(cfg, "game")?;
    let plant = game_plant(cfg)?;
    let spec = GameSpec::from_plant(&plant);
    let nash = solve_gare(&spec, 1e-14, DISCRETE_MAX_ITER)?;
    let (_, k_mixed) = optimal_gain(&plant, TimeDomain::Discrete)?;
    let diff = (&nash.k_star - &k_mixed).amax();
    emit(
        &json!({
            "case": cfg.case.as_str(),
            "gamma": plant.gamma,
            "seed": cfg.seed,
            "K_star": rows(&nash.k_star),
            "L_star": rows(&nash.l_star),
            "P_star": rows(&nash.p_star),
            "gare_residual": gare_residual(&spec, &nash.p_star)?,
            "value_matrix_certified": nash.value_matrix_certified,
            "mixed_K_star": rows(&k_mixed),
            "max_abs_diff": diff,
            "matches_mixed_design": diff <= GAME_MATCH_TOL,
        }),
        out,
    )
}

pub fn modelfree(cfg: &ExperimentConfig, out: Option<&Path>) -> CmdResult {
    discrete_only(cfg, "modelfree")?;
    let mf = &cfg.modelfree;
    let plant = game_plant(cfg)?;
    let spec = GameSpec::from_plant(&plant);
    let m = plant.n_states();
    let k0 = match &mf.k0 {
        Some(g) => cfg.resolve_gain(g, &plant)?,
        None => Mat::zeros(plant.n_inputs(), m),
    };
    let init_cov = match &mf.init_cov {
        Some(r) => matrix(r, "modelfree.init_cov")?,
        None => Mat::identity(m, m),
    };
    let rollout = RolloutConfig {
        m_traj: mf.m_traj,
        horizon: mf.horizon,
        radius: mf.radius,
        seed: cfg.seed,
        init_cov,
    };
    let k_star = solve_gare(&spec, 1e-14, DISCRETE_MAX_ITER)?.k_star;
    let trace = outer_ng(
        &spec, &k0, &rollout, mf.n_outer, mf.n_inner, mf.eta, mf.alpha, mf.variant, mf.mode,
    )?;
    let last = trace.records.last().expect("trace holds K0");
    let distance = (&last.k - &k_star).norm();
    let first_hit = trace
        .records
        .iter()
        .find(|r| (&r.k - &k_star).norm() <= mf.tol)
        .map(|r| r.iteration);
    let verdict = if !trace.all_feasible() {
        "infeasible"
    } else if distance <= mf.tol {
        "converged"
    } else {
        "not-converged"
    };
    let variant = match mf.variant {
        Variant::PolicyGradient => "pg",
        Variant::NaturalGradient => "npg",
    };
    let mode = match mf.mode {
        EstimatorMode::Rollout => "rollout",
        EstimatorMode::ExactCost => "exact_cost",
        EstimatorMode::ExactGradient => "exact_gradient",
    };
    emit(
        &json!({
            "case": cfg.case.as_str(),
            "algorithm": variant,
            "mode": mode,
            "eta": mf.eta,
            "alpha": mf.alpha,
            "gamma": plant.gamma,
            "converged": verdict == "converged",
            "verdict": verdict,
            "final_cost": last.exact_cost,
            "final_K": rows(&last.k),
            "K_star": rows(&k_star),
            "distance_to_optimum": distance,
            "first_within_tol": first_hit,
            "iterations": last.iteration,
            "seed": cfg.seed,
        }),
        out,
    )?;
    match verdict {
        "converged" => Ok(()),
        "infeasible" => Err(Failure {
            code: EXIT_INFEASIBLE,
            message: format!("iterate {} left the feasible set", last.iteration),
        }),
        _ => Err(Failure {
            code: EXIT_NONCONVERGENCE,
            message: format!("final distance to K* is {distance:.3e} > {:e}", mf.tol),
        }),
    }
}

pub fn case_list() -> CmdResult {
    println!(
        "{:<22} {:<11} {:>6} {:>6} {:>13} {:>8}",
        "case", "domain", "states", "inputs", "disturbances", "gamma"
    );
    for (name, domain) in CASE_NAMES {
        let (plant, _) = cases::by_name(name).expect("listed case");
        let gamma = match name {
            "case1" => "seeded".to_string(),
            _ => format!("{}", plant.gamma),
        };
        println!(
            "{name:<22} {:<11} {:>6} {:>6} {:>13} {gamma:>8}",
            domain.to_string(),
            plant.n_states(),
            plant.n_inputs(),
            plant.n_disturbances()
        );
    }
    println!("{:<22} {:<11} (from [custom])", "custom", "either");
    Ok(())
}
