//! Nonlinearity `(f, F)` and the scalar auxiliary variable.
//!
//! With `E₁(u) = ∫ F(|u|²)/2 dx + c₀`, the auxiliary variable is
//! `r = √E₁(u)` and the nonlinear coefficient is `g(u) = f(|u|²)/√E₁(u)`.
//! Newton's method differentiates `g(u)u` pointwise with the global square
//! root held fixed; [`GDerivatives`] carries the two Wirtinger derivatives.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, SolverError};
use crate::fem1d::{FemSpace, FemVector};

/// Below this modulus the `q < 3` derivatives are clamped to zero.
pub const SINGULAR_MODULUS: f64 = 1e-14;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum NonlinearityKind {
    /// `f(s) = κ s^{(q-1)/2}`, `F(s) = κ (2/(q+1)) s^{(q+1)/2}`.
    PowerLaw { kappa: f64, q: f64 },
    /// User-supplied `f`, `F` and `f'`.
    Custom {
        f: ScalarFn,
        big_f: ScalarFn,
        df: ScalarFn,
    },
}

impl fmt::Debug for NonlinearityKind {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlinearityKind::PowerLaw { kappa, q } => {
                write!(fm, "PowerLaw {{ kappa: {kappa}, q: {q} }}")
            }
            NonlinearityKind::Custom { .. } => write!(fm, "Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Nonlinearity {
    pub kind: NonlinearityKind,
    pub c0: f64,
}

/// `(∂_u [g(u)u], ∂_ū [g(u)u])` at a point, denominator frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GDerivatives {
    pub g1: Complex64,
    pub g2: Complex64,
    /// Set when the `q < 3` singularity at the origin forced a clamp.
    pub clamped: bool,
}

impl Nonlinearity {
    pub fn power(kappa: f64, q: f64, c0: f64) -> Result<Self> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(SolverError::config("q", format!("need q > 1, got {q}")));
        }
        if !kappa.is_finite() {
            return Err(SolverError::config("kappa", "must be finite"));
        }
        Self::with_kind(NonlinearityKind::PowerLaw { kappa, q }, c0)
    }

    /// Custom nonlinearity; `big_f' = f` is checked numerically.
    pub fn custom(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        big_f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        c0: f64,
    ) -> Result<Self> {
        let nl = Self::with_kind(
            NonlinearityKind::Custom {
                f: Arc::new(f),
                big_f: Arc::new(big_f),
                df: Arc::new(df),
            },
            c0,
        )?;
        nl.check_antiderivative()?;
        Ok(nl)
    }

    fn with_kind(kind: NonlinearityKind, c0: f64) -> Result<Self> {
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(SolverError::config("c0", format!("need c0 > 0, got {c0}")));
        }
        Ok(Nonlinearity { kind, c0 })
    }

    /// True when the nonlinear term vanishes identically.
    pub fn is_linear(&self) -> bool {
        matches!(self.kind, NonlinearityKind::PowerLaw { kappa, .. } if kappa == 0.0)
    }

    pub fn f(&self, s: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::PowerLaw { kappa, q } => kappa * s.powf(0.5 * (q - 1.0)),
            NonlinearityKind::Custom { f, .. } => f(s),
        }
    }

    #[allow(non_snake_case)]
    pub fn F(&self, s: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::PowerLaw { kappa, q } => {
                kappa * (2.0 / (q + 1.0)) * s.powf(0.5 * (q + 1.0))
            }
            NonlinearityKind::Custom { big_f, .. } => big_f(s),
        }
    }

    pub fn df(&self, s: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::PowerLaw { kappa, q } => {
                if *q == 3.0 {
                    *kappa
                } else {
                    kappa * 0.5 * (q - 1.0) * s.powf(0.5 * (q - 3.0))
                }
            }
            NonlinearityKind::Custom { df, .. } => df(s),
        }
    }

    /// Central-difference check of `F' = f` at a few sample points.
    pub fn check_antiderivative(&self) -> Result<()> {
        let step = 1e-6;
        for s in [0.1, 0.5, 1.0, 2.0] {
            let fd = (self.F(s + step) - self.F(s - step)) / (2.0 * step);
            let f = self.f(s);
            if (fd - f).abs() > 1e-6 * f.abs().max(1.0) {
                return Err(SolverError::config(
                    "nonlinearity",
                    format!("F' != f at s = {s}: {fd} vs {f}"),
                ));
            }
        }
        Ok(())
    }

    /// Default quadrature points per element for nonlinear integrals.
    pub fn default_quadrature(space: &FemSpace) -> usize {
        space.degree + 2
    }
}

/// The unknown pair `(u, r)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SavState {
    pub u: FemVector,
    pub r: f64,
    pub t: f64,
}

/// `∫ F(|u|²)/2 dx + c₀` with `nq` points per element.
pub fn sav_radicand(space: &FemSpace, u: &FemVector, nl: &Nonlinearity, nq: usize) -> Result<f64> {
    let integral = space.integrate_density(u, |v, _, _| 0.5 * nl.F(v.norm_sqr()), nq)?;
    Ok(integral + nl.c0)
}

/// `√(∫ F(|u|²)/2 dx + c₀)` with an explicit quadrature order.
pub fn sav_denominator_with(
    space: &FemSpace,
    u: &FemVector,
    nl: &Nonlinearity,
    nq: usize,
) -> Result<f64> {
    let radicand = sav_radicand(space, u, nl, nq)?;
    if !(radicand > 0.0) {
        return Err(SolverError::NonPositiveRadicand { radicand });
    }
    Ok(radicand.sqrt())
}

/// The global denominator of `g(u)`, with the default quadrature.
pub fn g_scalar_denominator(space: &FemSpace, u: &FemVector, nl: &Nonlinearity) -> Result<f64> {
    sav_denominator_with(space, u, nl, Nonlinearity::default_quadrature(space))
}

/// Initial auxiliary variable `r₀`.
pub fn r_init(space: &FemSpace, u0: &FemVector, nl: &Nonlinearity) -> Result<f64> {
    g_scalar_denominator(space, u0, nl)
}

/// Pointwise `g(u)·u = f(|u|²) u / denom`.
pub fn g_times_u(u: Complex64, denom: f64, nl: &Nonlinearity) -> Complex64 {
    u * (nl.f(u.norm_sqr()) / denom)
}

/// Pointwise Wirtinger derivatives of `g(u)u` with the denominator frozen.
pub fn g_derivatives(u: Complex64, denom: f64, nl: &Nonlinearity) -> GDerivatives {
    let s = u.norm_sqr();
    let singular = match nl.kind {
        NonlinearityKind::PowerLaw { q, .. } => q < 3.0 && u.norm() < SINGULAR_MODULUS,
        NonlinearityKind::Custom { .. } => false,
    };
    if singular {
        return GDerivatives {
            g1: Complex64::new(0.0, 0.0),
            g2: Complex64::new(0.0, 0.0),
            clamped: true,
        };
    }
    let df = nl.df(s);
    GDerivatives {
        g1: Complex64::new((nl.f(s) + df * s) / denom, 0.0),
        g2: u * u * (df / denom),
        clamped: false,
    }
}
