//! Single runs and convergence sweeps, with CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ProblemKind};
use crate::diagnostics::{ConvergenceTable, ExactSolution, ObservationRecord, RunMonitor};
use crate::error::{Result, SolverError};
use crate::fem1d::build_space;
use crate::sav_model::Nonlinearity;
use crate::slab_stepper::{integrate, Discretization, StepperConfig};

pub const TIMESERIES_HEADER: &str =
    "t,mass,mass_drift,sav_energy,sav_energy_drift,original_energy,h1_error,newton_iters";
pub const SUMMARY_HEADER: &str = "problem,M,p,k,tau,T,steps,max_mass_drift,max_sav_energy_drift,\
max_internal_mass,internal_mass_ok,final_h1_error,linf_h1_error,max_newton_iters,status";
pub const TIME_HEADER: &str = "k,tau,linf_h1_error,eoc";
pub const SPACE_HEADER: &str = "p,M,linf_h1_error,eoc";

/// C-style `%.10e`: mantissa with ten decimals, signed two-digit exponent.
pub fn sci(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}").to_lowercase();
    }
    let s = format!("{x:.10e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

fn nonlinearity(cfg: &ExperimentConfig) -> Result<Nonlinearity> {
    Nonlinearity::power(cfg.kappa, cfg.q, cfg.c0)
}

fn soliton(x: f64, t: f64) -> Complex64 {
    Complex64::new(0.0, 2.0 * x + 3.0 * t).exp() / (x + 4.0 * t).cosh()
}

fn soliton_grad(x: f64, t: f64) -> Complex64 {
    soliton(x, t) * Complex64::new(-(x + 4.0 * t).tanh(), 2.0)
}

/// Closed-form solution of the configured problem, when one exists.
pub fn exact_solution(cfg: &ExperimentConfig) -> Option<ExactSolution> {
    match cfg.problem {
        ProblemKind::Soliton if cfg.kappa == 2.0 && cfg.q == 3.0 => Some(ExactSolution {
            u: Box::new(soliton),
            grad: Box::new(soliton_grad),
        }),
        ProblemKind::Soliton | ProblemKind::Custom => None,
        ProblemKind::PlaneWave => {
            let (amp, xi) = (cfg.amplitude, cfg.wavenumber);
            let f = cfg.kappa * (amp * amp).powf((cfg.q - 1.0) / 2.0);
            let omega = xi * xi - f;
            let wave = move |x: f64, t: f64| Complex64::new(0.0, xi * x + omega * t).exp() * amp;
            Some(ExactSolution {
                u: Box::new(wave),
                grad: Box::new(move |x, t| wave(x, t) * Complex64::new(0.0, xi)),
            })
        }
    }
}

fn initial_data(cfg: &ExperimentConfig) -> Box<dyn Fn(f64) -> Complex64 + Send + Sync> {
    match cfg.problem {
        ProblemKind::Soliton => Box::new(|x| soliton(x, 0.0)),
        ProblemKind::PlaneWave => {
            let (amp, xi) = (cfg.amplitude, cfg.wavenumber);
            Box::new(move |x| Complex64::new(0.0, xi * x).exp() * amp)
        }
        ProblemKind::Custom => {
            let (amp, xi, x0, w) = (cfg.amplitude, cfg.wavenumber, cfg.center, cfg.width);
            Box::new(move |x| {
                let d = (x - x0) / w;
                Complex64::new(0.0, xi * x).exp() * (amp * (-0.5 * d * d).exp())
            })
        }
    }
}

/// Everything measured in one integration.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub m: usize,
    pub tau: f64,
    pub steps: usize,
    pub records: Vec<ObservationRecord>,
    pub max_mass_drift: f64,
    pub max_sav_energy_drift: f64,
    pub max_internal_mass: f64,
    pub internal_mass_violations: Vec<usize>,
    /// Present when the configured problem has a closed form.
    pub linf_h1_error: Option<f64>,
    pub failure: Option<SolverError>,
}

impl RunResult {
    pub fn max_newton_iters(&self) -> usize {
        self.records.iter().map(|r| r.newton_iters).max().unwrap_or(0)
    }

    pub fn converged(&self) -> bool {
        self.failure.is_none()
    }
}

/// Integrate the configured problem with `m` elements and step `tau`.
/// Usage errors are returned; numerical failures are kept in the result.
pub fn execute(cfg: &ExperimentConfig, m: usize, tau: f64) -> Result<RunResult> {
    let space = build_space(cfg.a, cfg.b, m, cfg.p, cfg.bc)?;
    let disc = Discretization::new(space, cfg.k, nonlinearity(cfg)?)?;
    let stepper = StepperConfig {
        newton_tol: cfg.newton_tol,
        max_newton_iters: cfg.max_newton_iters,
        full_jacobian: cfg.full_jacobian,
        ..StepperConfig::new(cfg.k, tau)
    };
    stepper.validate()?;
    let exact = exact_solution(cfg);
    let u0 = initial_data(cfg);
    let mut monitor = RunMonitor::new(exact.as_ref());
    let outcome = integrate(&disc, &stepper, u0, cfg.t_final, &mut [&mut monitor]);
    let failure = match outcome {
        Ok(_) => None,
        Err(e) if e.is_usage() => return Err(e),
        Err(e) => Some(e),
    };
    Ok(RunResult {
        m,
        tau,
        steps: monitor.records.len().saturating_sub(1),
        max_mass_drift: monitor.max_mass_drift(),
        max_sav_energy_drift: monitor.max_sav_energy_drift(),
        max_internal_mass: monitor.max_internal_mass,
        internal_mass_violations: monitor.internal_mass_violations.clone(),
        linf_h1_error: exact.as_ref().map(|_| monitor.linf_h1_error),
        records: monitor.records,
        failure,
    })
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn timeseries_csv(result: &RunResult, tau: f64) -> String {
    let mut out = String::from(TIMESERIES_HEADER);
    out.push('\n');
    let Some(first) = result.records.first() else {
        return out;
    };
    for r in &result.records {
        let h1 = r.h1_error.map(sci).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            sci(r.t),
            sci(r.mass),
            sci(r.mass - first.mass),
            sci(r.sav_energy),
            sci(r.sav_energy - first.sav_energy),
            sci(r.original_energy),
            h1,
            r.newton_iters
        );
    }
    if result.failure.is_some() {
        let t = (result.steps + 1) as f64 * tau;
        let _ = writeln!(out, "{},nan,nan,nan,nan,nan,nan,-1", sci(t));
    }
    out
}

fn problem_name(p: ProblemKind) -> &'static str {
    match p {
        ProblemKind::Soliton => "soliton",
        ProblemKind::PlaneWave => "plane_wave",
        ProblemKind::Custom => "custom",
    }
}

/// Pass/fail of the `--check` assertions.
pub fn check_failures(cfg: &ExperimentConfig, result: &RunResult) -> Vec<String> {
    let mut failed = Vec::new();
    if result.max_mass_drift > cfg.mass_tol {
        failed.push(format!(
            "mass drift {} exceeds {}",
            sci(result.max_mass_drift),
            sci(cfg.mass_tol)
        ));
    }
    if result.max_sav_energy_drift > cfg.energy_tol {
        failed.push(format!(
            "SAV energy drift {} exceeds {}",
            sci(result.max_sav_energy_drift),
            sci(cfg.energy_tol)
        ));
    }
    if !result.internal_mass_violations.is_empty() {
        failed.push(format!(
            "internal-stage mass bound violated on slabs {:?}",
            result.internal_mass_violations
        ));
    }
    failed
}

/// Outcome of a subcommand: whether it succeeded and a one-line summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub success: bool,
    pub message: String,
}

/// `run`: write `timeseries.csv` and `summary.csv`.
pub fn run_single(cfg: &ExperimentConfig, check: bool) -> Result<CommandOutcome> {
    let m = cfg.elements()?;
    let tau = cfg.tau()?;
    let result = execute(cfg, m, tau)?;
    write_file(&cfg.out_dir, "timeseries.csv", &timeseries_csv(&result, tau))?;

    let failures = if check { check_failures(cfg, &result) } else { Vec::new() };
    let status = match (&result.failure, failures.is_empty()) {
        (Some(_), _) => "failed",
        (None, false) => "check_failed",
        (None, true) => "ok",
    };
    let opt = |v: Option<f64>| v.map(sci).unwrap_or_default();
    let final_h1 = result.records.last().and_then(|r| r.h1_error);
    let mut summary = String::from(SUMMARY_HEADER);
    let _ = writeln!(
        summary,
        "\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        problem_name(cfg.problem),
        m,
        cfg.p,
        cfg.k,
        sci(tau),
        sci(cfg.t_final),
        result.steps,
        sci(result.max_mass_drift),
        sci(result.max_sav_energy_drift),
        sci(result.max_internal_mass),
        result.internal_mass_violations.is_empty(),
        opt(final_h1),
        opt(result.linf_h1_error),
        result.max_newton_iters(),
        status
    );
    write_file(&cfg.out_dir, "summary.csv", &summary)?;

    let mut message = format!(
        "{} steps, max mass drift {}, max SAV energy drift {}",
        result.steps,
        sci(result.max_mass_drift),
        sci(result.max_sav_energy_drift)
    );
    if let Some(e) = result.linf_h1_error {
        let _ = write!(message, ", L∞(H¹) error {}", sci(e));
    }
    if let Some(err) = &result.failure {
        let _ = write!(message, "; {err}");
    }
    for f in &failures {
        let _ = write!(message, "; {f}");
    }
    Ok(CommandOutcome {
        success: status == "ok",
        message,
    })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("SAV_NLS_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| SolverError::config("SAV_NLS_THREADS", format!("expected an integer, got '{raw}'")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| SolverError::config("SAV_NLS_THREADS", e.to_string()))
}

/// Run `cases` in parallel; rows come back in input order.
fn sweep(cfg: &ExperimentConfig, cases: &[(usize, f64)]) -> Result<Vec<RunResult>> {
    if exact_solution(cfg).is_none() {
        return Err(SolverError::config(
            "problem",
            "convergence sweeps need a problem with a closed-form solution",
        ));
    }
    let pool = thread_pool()?;
    pool.install(|| {
        cases
            .par_iter()
            .map(|&(m, tau)| execute(cfg, m, tau))
            .collect::<Result<Vec<_>>>()
    })
}

fn convergence_csv(
    header: &str,
    lead: usize,
    params: &[f64],
    labels: &[String],
    results: &[RunResult],
) -> (String, ConvergenceTable) {
    // a failed run has no error, which blanks the orders next to it
    let errors: Vec<f64> = results
        .iter()
        .map(|r| if r.converged() { r.linf_h1_error.unwrap_or(f64::NAN) } else { f64::NAN })
        .collect();
    let table = ConvergenceTable::new(params, &errors);
    let mut out = String::from(header);
    out.push('\n');
    for (row, label) in table.rows.iter().zip(labels) {
        let order = row.eoc.map(sci).unwrap_or_default();
        let _ = writeln!(out, "{lead},{label},{},{order}", sci(row.error));
    }
    (out, table)
}

fn sweep_outcome(table: &ConvergenceTable, results: &[RunResult]) -> CommandOutcome {
    let orders: Vec<String> = table.orders().map(|o| format!("{o:.4}")).collect();
    let mut message = format!("orders [{}]", orders.join(", "));
    let mut failed = 0;
    for r in results {
        if let Some(e) = &r.failure {
            failed += 1;
            let _ = write!(message, "; M={} tau={} failed: {e}", r.m, sci(r.tau));
        }
    }
    CommandOutcome {
        success: failed == 0,
        message,
    }
}

/// `sweep-time`: one run per entry of `tau_list`.
pub fn run_time_sweep(cfg: &ExperimentConfig) -> Result<(CommandOutcome, ConvergenceTable)> {
    if cfg.tau_list.is_empty() {
        return Err(SolverError::config("tau_list", "missing"));
    }
    let m = cfg.elements()?;
    let cases: Vec<(usize, f64)> = cfg.tau_list.iter().map(|&t| (m, t)).collect();
    let results = sweep(cfg, &cases)?;
    let labels: Vec<String> = cfg.tau_list.iter().map(|&t| sci(t)).collect();
    let (csv, table) = convergence_csv(TIME_HEADER, cfg.k, &cfg.tau_list, &labels, &results);
    write_file(&cfg.out_dir, "time_convergence.csv", &csv)?;
    Ok((sweep_outcome(&table, &results), table))
}

/// `sweep-space`: one run per entry of `M_list`; orders are taken in `h`.
pub fn run_space_sweep(cfg: &ExperimentConfig) -> Result<(CommandOutcome, ConvergenceTable)> {
    if cfg.m_list.is_empty() {
        return Err(SolverError::config("M_list", "missing"));
    }
    let tau = cfg.tau()?;
    let cases: Vec<(usize, f64)> = cfg.m_list.iter().map(|&m| (m, tau)).collect();
    let results = sweep(cfg, &cases)?;
    let h: Vec<f64> = cfg.m_list.iter().map(|&m| cfg.length() / m as f64).collect();
    let labels: Vec<String> = cfg.m_list.iter().map(|m| m.to_string()).collect();
    let (csv, table) = convergence_csv(SPACE_HEADER, cfg.p, &h, &labels, &results);
    write_file(&cfg.out_dir, "space_convergence.csv", &csv)?;
    Ok((sweep_outcome(&table, &results), table))
}
