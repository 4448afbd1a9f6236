//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::error::{Result, SolverError};
use crate::fem1d::BoundaryCondition;
use crate::slab_stepper::step_count;

/// Every key the configuration understands.
pub const KEYS: &[&str] = &[
    "problem",
    "a",
    "b",
    "M",
    "p",
    "k",
    "tau",
    "T",
    "nonlinearity",
    "kappa",
    "q",
    "c0",
    "bc",
    "newton_tol",
    "max_newton_iters",
    "full_jacobian",
    "amplitude",
    "wavenumber",
    "center",
    "width",
    "tau_list",
    "M_list",
    "mass_tol",
    "energy_tol",
    "out_dir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// `sech(x + 4t) e^{i(2x + 3t)}` with `f(s) = 2s`.
    Soliton,
    /// `A e^{i(ξx + (ξ² − f(A²))t)}`.
    PlaneWave,
    /// Gaussian packet `A e^{-(x-x₀)²/(2w²)} e^{iξx}`; no closed form.
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub a: f64,
    pub b: f64,
    pub m: Option<usize>,
    pub p: usize,
    pub k: usize,
    pub tau: Option<f64>,
    pub t_final: f64,
    pub kappa: f64,
    pub q: f64,
    pub c0: f64,
    pub bc: BoundaryCondition,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub full_jacobian: bool,
    pub amplitude: f64,
    pub wavenumber: f64,
    pub center: f64,
    pub width: f64,
    pub tau_list: Vec<f64>,
    pub m_list: Vec<usize>,
    pub mass_tol: f64,
    pub energy_tol: f64,
    pub out_dir: PathBuf,
}

/// Parse a number, accepting `n/d` fractions.
pub fn parse_number(key: &str, raw: &str) -> Result<f64> {
    let bad = || SolverError::config(key, format!("expected a number, got '{raw}'"));
    let value = match raw.split_once('/') {
        Some((num, den)) => {
            let n: f64 = num.trim().parse().map_err(|_| bad())?;
            let d: f64 = den.trim().parse().map_err(|_| bad())?;
            n / d
        }
        None => raw.trim().parse().map_err(|_| bad())?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}

fn parse_count(key: &str, raw: &str) -> Result<usize> {
    raw.trim()
        .parse()
        .map_err(|_| SolverError::config(key, format!("expected a non-negative integer, got '{raw}'")))
}

fn parse_list<T>(key: &str, raw: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(SolverError::config(key, "list is empty"));
    }
    Ok(items)
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(SolverError::config(key, format!("expected true/false, got '{other}'"))),
    }
}

/// Read `key = value` lines; `#` starts a comment.
pub fn read_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            SolverError::config(format!("line {}", lineno + 1), format!("expected 'key = value', got '{line}'"))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Combine a config file with overrides (later entries win) and validate.
pub fn parse_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut values: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SolverError::config("config", format!("{}: {e}", path.display())))?;
        for (k, v) in read_pairs(&text)? {
            values.insert(k, v);
        }
    }
    for (k, v) in overrides {
        values.insert(k.clone(), v.clone());
    }
    from_map(&values)
}

fn from_map(values: &BTreeMap<String, String>) -> Result<ExperimentConfig> {
    if let Some(unknown) = values.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(SolverError::config(unknown.clone(), "unknown key"));
    }
    let get = |key: &str| values.get(key).map(String::as_str);
    let required = |key: &str| get(key).ok_or_else(|| SolverError::config(key, "missing"));
    let num_or = |key: &str, default: f64| get(key).map_or(Ok(default), |v| parse_number(key, v));

    let problem = match required("problem")? {
        "soliton" => ProblemKind::Soliton,
        "plane_wave" => ProblemKind::PlaneWave,
        "custom" => ProblemKind::Custom,
        other => {
            return Err(SolverError::config(
                "problem",
                format!("expected soliton, plane_wave or custom, got '{other}'"),
            ))
        }
    };
    let bc = match get("bc").unwrap_or("periodic") {
        "periodic" => BoundaryCondition::Periodic,
        "dirichlet" => BoundaryCondition::Dirichlet,
        other => return Err(SolverError::config("bc", format!("expected periodic or dirichlet, got '{other}'"))),
    };
    // only the power law is reachable from a text file
    if let Some(other) = get("nonlinearity").filter(|v| *v != "power") {
        return Err(SolverError::config("nonlinearity", format!("expected power, got '{other}'")));
    }
    let cfg = ExperimentConfig {
        problem,
        a: num_or("a", -20.0)?,
        b: num_or("b", 20.0)?,
        m: get("M").map(|v| parse_count("M", v)).transpose()?,
        p: parse_count("p", required("p")?)?,
        k: parse_count("k", required("k")?)?,
        tau: get("tau").map(|v| parse_number("tau", v)).transpose()?,
        t_final: parse_number("T", required("T")?)?,
        kappa: num_or("kappa", 2.0)?,
        q: num_or("q", 3.0)?,
        c0: num_or("c0", 1.0)?,
        bc,
        newton_tol: num_or("newton_tol", 1e-10)?,
        max_newton_iters: get("max_newton_iters").map_or(Ok(25), |v| parse_count("max_newton_iters", v))?,
        full_jacobian: get("full_jacobian").map_or(Ok(false), |v| parse_bool("full_jacobian", v))?,
        amplitude: num_or("amplitude", 1.0)?,
        wavenumber: num_or("wavenumber", 0.0)?,
        center: num_or("center", 0.0)?,
        width: num_or("width", 1.0)?,
        tau_list: get("tau_list").map_or(Ok(vec![]), |v| parse_list("tau_list", v, parse_number))?,
        m_list: get("M_list").map_or(Ok(vec![]), |v| parse_list("M_list", v, parse_count))?,
        mass_tol: num_or("mass_tol", 1e-10)?,
        energy_tol: num_or("energy_tol", 1e-9)?,
        out_dir: PathBuf::from(get("out_dir").unwrap_or(".")),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if !(self.b > self.a) {
            return Err(SolverError::config("b", "domain must satisfy a < b"));
        }
        if !(self.t_final >= 0.0) {
            return Err(SolverError::config("T", "must be non-negative"));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0) {
                return Err(SolverError::config("tau", "must be positive"));
            }
            step_count(self.t_final, tau)?;
        }
        for &tau in &self.tau_list {
            if !(tau > 0.0) {
                return Err(SolverError::config("tau_list", "entries must be positive"));
            }
            step_count(self.t_final, tau).map_err(|_| {
                SolverError::config("tau_list", format!("T/tau is not an integer for tau = {tau}"))
            })?;
        }
        if self.width <= 0.0 {
            return Err(SolverError::config("width", "must be positive"));
        }
        if self.problem == ProblemKind::PlaneWave && self.bc == BoundaryCondition::Periodic {
            let periods = self.wavenumber * (self.b - self.a) / (2.0 * PI);
            if (periods - periods.round()).abs() > 1e-9 * periods.abs().max(1.0) {
                return Err(SolverError::config(
                    "wavenumber",
                    "must fit a whole number of periods in the domain",
                ));
            }
        }
        Ok(())
    }

    pub fn tau(&self) -> Result<f64> {
        self.tau.ok_or_else(|| SolverError::config("tau", "missing"))
    }

    pub fn elements(&self) -> Result<usize> {
        self.m.ok_or_else(|| SolverError::config("M", "missing"))
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }
}
