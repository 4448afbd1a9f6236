//! The fully discrete time stepper.
//!
//! On each slab the unknowns are the stage values `U_j = u_h(t_{nj})` and
//! `R_j = r_h(t_{nj})`, `j = 1..k`. With `∂_t u(t_{nj})` obtained from the
//! collocation differentiation matrix applied to `[u_h^{n-1}, U_1, …, U_k]`,
//! the stage equations are
//!
//! ```text
//! i M ∂_t U_j + A U_j − R_j N(U_j) = 0,
//! ∂_t R_j − ½ Re( N(U_j), ∂_t U_j ) = 0,
//! ```
//!
//! where `N(U)_i = ∫ g(U) U φ_i dx`. Newton's method is run on the real and
//! imaginary parts jointly because the linearization involves `conj(δU)`.
//! The Jacobian main block is banded; the `k` scalar unknowns `R_j` form a
//! dense border. With `full_jacobian` set, `k` more border unknowns carry the
//! derivative of the global SAV denominator, making the Jacobian exact.

use num_complex::Complex64;

use crate::error::{Result, SolverError};
use crate::fem1d::{
    assemble_mass, assemble_stiffness, ElementQuadrature, FemSpace, FemVector, SparseOperator,
};
use crate::linsolve::{solve_bordered, BandMatrix, BorderedSystem};
use crate::sav_model::{g_derivatives, g_times_u, r_init, sav_radicand, Nonlinearity, SavState};
use crate::time_collocation::{collocation_scheme, CollocationScheme};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct StepperConfig {
    pub tau: f64,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub k: usize,
    /// Keep per-stage `R_j` values in each [`StepReport`].
    pub report_stages: bool,
    /// Include the derivative of the global SAV denominator in the Jacobian.
    pub full_jacobian: bool,
}

impl StepperConfig {
    pub fn new(k: usize, tau: f64) -> Self {
        StepperConfig {
            tau,
            newton_tol: 1e-10,
            max_newton_iters: 25,
            k,
            report_stages: false,
            full_jacobian: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(SolverError::config("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(SolverError::config("newton_tol", "must be positive"));
        }
        if self.max_newton_iters == 0 {
            return Err(SolverError::config("max_newton_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Everything that stays fixed across slabs: the space, its operators, the
/// temporal scheme and the nonlinearity.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub space: FemSpace,
    pub mass: SparseOperator,
    pub stiffness: SparseOperator,
    pub scheme: CollocationScheme,
    pub nl: Nonlinearity,
    /// Quadrature points per element for nonlinear integrals.
    pub nq: usize,
    quad: ElementQuadrature,
    position: Vec<usize>,
    dof_bandwidth: usize,
}

impl Discretization {
    pub fn new(space: FemSpace, k: usize, nl: Nonlinearity) -> Result<Self> {
        let nq = Nonlinearity::default_quadrature(&space);
        Self::with_quadrature(space, k, nl, nq)
    }

    pub fn with_quadrature(space: FemSpace, k: usize, nl: Nonlinearity, nq: usize) -> Result<Self> {
        if nq < 1 {
            return Err(SolverError::config("nq", "need at least one quadrature point"));
        }
        let scheme = collocation_scheme(k)?;
        let mass = assemble_mass(&space);
        let stiffness = assemble_stiffness(&space);
        let quad = space.element_quadrature(nq);
        let position = space.banded_ordering();
        let dof_bandwidth = space
            .dof_map
            .iter()
            .flat_map(|dofs| {
                let p = &position;
                dofs.iter().flatten().flat_map(move |&a| {
                    dofs.iter().flatten().map(move |&b| p[a].abs_diff(p[b]))
                })
            })
            .max()
            .unwrap_or(0);
        Ok(Discretization {
            space,
            mass,
            stiffness,
            scheme,
            nl,
            nq,
            quad,
            position,
            dof_bandwidth,
        })
    }

    pub fn stages(&self) -> usize {
        self.scheme.stages()
    }

    pub fn num_dofs(&self) -> usize {
        self.space.num_dofs
    }

    /// `(u, u)` through the mass matrix.
    pub fn mass_norm_sqr(&self, u: &[Complex64]) -> f64 {
        self.mass.quadratic_form(u).re
    }

    /// Initial state: nodal interpolant and `r₀`.
    pub fn initial_state(&self, u0: impl Fn(f64) -> Complex64) -> Result<SavState> {
        let u = self.space.interpolate(u0)?;
        let r = r_init(&self.space, &u, &self.nl)?;
        Ok(SavState { u, r, t: 0.0 })
    }
}

/// Stage values of one slab.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabUnknowns {
    pub stages: Vec<FemVector>,
    pub r: Vec<f64>,
}

impl SlabUnknowns {
    /// Constant-in-time extrapolation of `state`.
    pub fn constant(state: &SavState, k: usize) -> Self {
        SlabUnknowns {
            stages: vec![state.u.clone(); k],
            r: vec![state.r; k],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub increment_history: Vec<f64>,
    /// Max-norm of the residual at the accepted iterate.
    pub residual_final: f64,
    pub warnings: Vec<String>,
    pub stage_r: Option<Vec<f64>>,
}

/// Per-stage residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabResidual {
    pub res_u: Vec<Vec<Complex64>>,
    pub res_r: Vec<f64>,
}

impl SlabResidual {
    pub fn max_norm(&self) -> f64 {
        self.res_u
            .iter()
            .flatten()
            .map(|z| z.norm())
            .chain(self.res_r.iter().map(|r| r.abs()))
            .fold(0.0, f64::max)
    }
}

/// Nonlinear data of one stage value.
#[derive(Debug, Clone)]
struct StageNonlinear {
    denom: f64,
    /// `N(U)_i = ∫ g(U) U φ_i`.
    load: Vec<Complex64>,
}

fn stage_nonlinear(disc: &Discretization, u: &FemVector) -> Result<StageNonlinear> {
    let n = disc.num_dofs();
    if disc.nl.is_linear() {
        return Ok(StageNonlinear {
            denom: disc.nl.c0.sqrt(),
            load: vec![ZERO; n],
        });
    }
    let radicand = sav_radicand(&disc.space, u, &disc.nl, disc.nq)?;
    if !(radicand > 0.0) {
        return Err(SolverError::NonPositiveRadicand { radicand });
    }
    let denom = radicand.sqrt();
    let mut load = vec![ZERO; n];
    let space = &disc.space;
    space.for_each_quadrature_point(&u.0, &disc.quad, |e, q, _, w, val, _| {
        let gu = g_times_u(val, denom, &disc.nl) * w;
        for (l, dof) in space.dof_map[e].iter().enumerate() {
            if let Some(i) = dof {
                load[*i] += gu * disc.quad.phi[q][l];
            }
        }
    });
    Ok(StageNonlinear { denom, load })
}

/// Time derivatives at the stages, `(2/τ) D [u0, U_1..U_k]`.
fn stage_derivatives(
    scheme: &CollocationScheme,
    tau: f64,
    initial: &[Complex64],
    stages: &[FemVector],
) -> Vec<Vec<Complex64>> {
    let scale = 2.0 / tau;
    scheme
        .diff_matrix
        .iter()
        .map(|row| {
            let mut d: Vec<Complex64> = initial.iter().map(|v| v * (row[0] * scale)).collect();
            for (m, stage) in stages.iter().enumerate() {
                let c = row[m + 1] * scale;
                for (di, v) in d.iter_mut().zip(&stage.0) {
                    *di += v * c;
                }
            }
            d
        })
        .collect()
}

fn scalar_derivatives(scheme: &CollocationScheme, tau: f64, initial: f64, stages: &[f64]) -> Vec<f64> {
    scheme
        .diff_matrix
        .iter()
        .map(|row| {
            (2.0 / tau)
                * (row[0] * initial + stages.iter().zip(&row[1..]).map(|(r, d)| r * d).sum::<f64>())
        })
        .collect()
}

fn check_shapes(disc: &Discretization, state: &SavState, unknowns: &SlabUnknowns) -> Result<()> {
    let k = disc.stages();
    let n = disc.num_dofs();
    if unknowns.stages.len() != k || unknowns.r.len() != k {
        return Err(SolverError::Input(format!("expected {k} stages")));
    }
    if state.u.len() != n || unknowns.stages.iter().any(|s| s.len() != n) {
        return Err(SolverError::Input(format!("expected vectors of length {n}")));
    }
    Ok(())
}

struct Evaluated {
    residual: SlabResidual,
    nonlinear: Vec<StageNonlinear>,
    du: Vec<Vec<Complex64>>,
}

fn evaluate(
    disc: &Discretization,
    tau: f64,
    state: &SavState,
    unknowns: &SlabUnknowns,
) -> Result<Evaluated> {
    check_shapes(disc, state, unknowns)?;
    let du = stage_derivatives(&disc.scheme, tau, &state.u.0, &unknowns.stages);
    let dr = scalar_derivatives(&disc.scheme, tau, state.r, &unknowns.r);
    let nonlinear = unknowns
        .stages
        .iter()
        .map(|u| stage_nonlinear(disc, u))
        .collect::<Result<Vec<_>>>()?;
    let i = Complex64::i();
    let mut res_u = Vec::with_capacity(du.len());
    let mut res_r = Vec::with_capacity(du.len());
    for j in 0..du.len() {
        let m_du = disc.mass.apply(&du[j]);
        let a_u = disc.stiffness.apply(&unknowns.stages[j].0);
        let rj = unknowns.r[j];
        let load = &nonlinear[j].load;
        res_u.push(
            (0..m_du.len())
                .map(|d| i * m_du[d] + a_u[d] - load[d] * rj)
                .collect(),
        );
        let coupling: f64 = load.iter().zip(&du[j]).map(|(nv, dv)| (nv * dv.conj()).re).sum();
        res_r.push(dr[j] - 0.5 * coupling);
    }
    Ok(Evaluated {
        residual: SlabResidual { res_u, res_r },
        nonlinear,
        du,
    })
}

/// Collocation residual of the slab equations at `unknowns`.
pub fn residual(
    disc: &Discretization,
    tau: f64,
    state: &SavState,
    unknowns: &SlabUnknowns,
) -> Result<SlabResidual> {
    Ok(evaluate(disc, tau, state, unknowns)?.residual)
}

/// Outcome of a single Newton update.
#[derive(Debug, Clone)]
pub struct NewtonUpdate {
    pub unknowns: SlabUnknowns,
    pub increment_norm: f64,
    /// Residual at the input iterate.
    pub residual_before: f64,
    /// Quadrature points where the `q < 3` derivative clamp applied.
    pub clamped_points: usize,
}

/// Real-form index layout of the Newton system.
struct Layout<'a> {
    position: &'a [usize],
    k: usize,
}

impl Layout<'_> {
    #[inline]
    fn index(&self, dof: usize, stage: usize, part: usize) -> usize {
        (self.position[dof] * self.k + stage) * 2 + part
    }
}

/// Add `c · δU` (complex-linear) to the real 2×2 block.
#[inline]
fn add_linear(a: &mut BandMatrix<f64>, row: usize, col: usize, c: Complex64) {
    if c.re != 0.0 {
        a.add(row, col, c.re);
        a.add(row + 1, col + 1, c.re);
    }
    if c.im != 0.0 {
        a.add(row, col + 1, -c.im);
        a.add(row + 1, col, c.im);
    }
}

/// Add `d · conj(δU)` to the real 2×2 block.
#[inline]
fn add_conjugate(a: &mut BandMatrix<f64>, row: usize, col: usize, d: Complex64) {
    a.add(row, col, d.re);
    a.add(row, col + 1, d.im);
    a.add(row + 1, col, d.im);
    a.add(row + 1, col + 1, -d.re);
}

/// The assembled real bordered Newton system at an iterate.
pub struct NewtonSystem {
    pub system: BorderedSystem<f64>,
    pub residual: SlabResidual,
    pub clamped_points: usize,
    n_dofs: usize,
    k: usize,
    position: Vec<usize>,
}

impl NewtonSystem {
    /// Pack a complex stage perturbation into the real main vector.
    pub fn pack(&self, du: &[FemVector]) -> Vec<f64> {
        let layout = Layout { position: &self.position, k: self.k };
        let stages: Vec<&[Complex64]> = du.iter().map(|v| v.as_slice()).collect();
        pack_stages(&layout, self.n_dofs, &stages)
    }

    /// Inverse of [`NewtonSystem::pack`].
    pub fn unpack(&self, x: &[f64]) -> Vec<FemVector> {
        let layout = Layout { position: &self.position, k: self.k };
        (0..self.k)
            .map(|j| {
                FemVector(
                    (0..self.n_dofs)
                        .map(|d| {
                            let idx = layout.index(d, j, 0);
                            Complex64::new(x[idx], x[idx + 1])
                        })
                        .collect(),
                )
            })
            .collect()
    }

    /// Pack a slab residual in the row ordering of the system.
    pub fn pack_residual(&self, res: &SlabResidual) -> (Vec<f64>, Vec<f64>) {
        let layout = Layout { position: &self.position, k: self.k };
        (pack_stages(&layout, self.n_dofs, &res.res_u), res.res_r.clone())
    }
}

fn pack_stages<V: AsRef<[Complex64]>>(layout: &Layout<'_>, n_dofs: usize, stages: &[V]) -> Vec<f64> {
    let mut x = vec![0.0; 2 * layout.k * n_dofs];
    for (j, v) in stages.iter().enumerate() {
        for (d, z) in v.as_ref().iter().enumerate() {
            let idx = layout.index(d, j, 0);
            x[idx] = z.re;
            x[idx + 1] = z.im;
        }
    }
    x
}

/// Assemble the real bordered Jacobian of the slab equations at `unknowns`.
pub fn assemble_newton_system(
    disc: &Discretization,
    tau: f64,
    state: &SavState,
    unknowns: &SlabUnknowns,
    full_jacobian: bool,
) -> Result<NewtonSystem> {
    let ev = evaluate(disc, tau, state, unknowns)?;
    let k = disc.stages();
    let n_dofs = disc.num_dofs();
    let layout = Layout { position: &disc.position, k };
    let n = 2 * k * n_dofs;
    let bw = disc.dof_bandwidth * 2 * k + 2 * k - 1;
    let mut jac = BandMatrix::<f64>::zeros(n, bw, bw);
    let scale = 2.0 / tau;
    let i = Complex64::i();
    let diff = &disc.scheme.diff_matrix;

    // i (2/τ) (D ⊗ M) + I ⊗ A
    for row_dof in 0..n_dofs {
        let a_row: Vec<(usize, f64)> = disc.stiffness.row(row_dof).collect();
        for (col_dof, m_val) in disc.mass.row(row_dof) {
            for j in 0..k {
                let row = layout.index(row_dof, j, 0);
                for m in 0..k {
                    let c = i * (scale * diff[j][m + 1] * m_val);
                    add_linear(&mut jac, row, layout.index(col_dof, m, 0), c);
                }
            }
        }
        for &(col_dof, a_val) in &a_row {
            for j in 0..k {
                add_linear(
                    &mut jac,
                    layout.index(row_dof, j, 0),
                    layout.index(col_dof, j, 0),
                    Complex64::new(a_val, 0.0),
                );
            }
        }
    }

    let nb = if full_jacobian { 2 * k } else { k };
    let mut border_cols = vec![vec![0.0; n]; nb];
    let mut border_rows = vec![vec![0.0; n]; nb];
    let mut corner = vec![vec![0.0; nb]; nb];
    let mut clamped = 0usize;
    let space = &disc.space;
    let quad = &disc.quad;
    let linear = disc.nl.is_linear();

    for j in 0..k {
        let rj = unknowns.r[j];
        let nonlin = &ev.nonlinear[j];
        let du = &ev.du[j];
        // α_l = Σ_q w g1 φ_l conj(∂_t U), β_l = Σ_q w g2 φ_l conj(∂_t U)
        let mut alpha = vec![ZERO; n_dofs];
        let mut beta = vec![ZERO; n_dofs];
        if !linear {
            let mut local_du = vec![ZERO; space.degree + 1];
            let mut e_last = usize::MAX;
            space.for_each_quadrature_point(&unknowns.stages[j].0, quad, |e, q, _, w, val, _| {
                if e != e_last {
                    space.local_coefficients(du, e, &mut local_du);
                    e_last = e;
                }
                let d = g_derivatives(val, nonlin.denom, &disc.nl);
                if d.clamped {
                    clamped += 1;
                }
                let du_q: Complex64 = local_du
                    .iter()
                    .zip(&quad.phi[q])
                    .map(|(c, p)| c * p)
                    .sum();
                let dofs = &space.dof_map[e];
                for (a, row_dof) in dofs.iter().enumerate() {
                    let Some(row_dof) = *row_dof else { continue };
                    let pa = quad.phi[q][a] * w;
                    alpha[row_dof] += d.g1 * pa * du_q.conj();
                    beta[row_dof] += d.g2 * pa * du_q.conj();
                    let row = layout.index(row_dof, j, 0);
                    for (b, col_dof) in dofs.iter().enumerate() {
                        let Some(col_dof) = *col_dof else { continue };
                        let pab = pa * quad.phi[q][b];
                        let col = layout.index(col_dof, j, 0);
                        add_linear(&mut jac, row, col, -d.g1 * (rj * pab));
                        add_conjugate(&mut jac, row, col, -d.g2 * (rj * pab));
                    }
                }
            });
        }

        // column for R_j: ∂res_u_j/∂R_j = −N(U_j)
        for (d, nv) in nonlin.load.iter().enumerate() {
            let idx = layout.index(d, j, 0);
            border_cols[j][idx] = -nv.re;
            border_cols[j][idx + 1] = -nv.im;
        }
        // ∂res_r_j/∂R_m = (2/τ) D_{j,m}
        for m in 0..k {
            corner[j][m] = scale * diff[j][m + 1];
        }
        // ∂res_r_j/∂U: −½ Re[(G1 δU + G2 δŪ, ∂_t U) + (N, ∂_t δU)]
        for d in 0..n_dofs {
            let idx = layout.index(d, j, 0);
            border_rows[j][idx] += -0.5 * (alpha[d].re + beta[d].re);
            border_rows[j][idx + 1] += -0.5 * (-alpha[d].im + beta[d].im);
            let nv = nonlin.load[d];
            for m in 0..k {
                let c = -0.5 * scale * diff[j][m + 1];
                let idx_m = layout.index(d, m, 0);
                border_rows[j][idx_m] += c * nv.re;
                border_rows[j][idx_m + 1] += c * nv.im;
            }
        }

        if full_jacobian {
            // s_j = δ(denominator)/denominator
            let s = k + j;
            let coupling: f64 = nonlin.load.iter().zip(du).map(|(nv, dv)| (nv * dv.conj()).re).sum();
            for (d, nv) in nonlin.load.iter().enumerate() {
                let idx = layout.index(d, j, 0);
                border_cols[s][idx] = rj * nv.re;
                border_cols[s][idx + 1] = rj * nv.im;
                border_rows[s][idx] = -nv.re / (2.0 * nonlin.denom);
                border_rows[s][idx + 1] = -nv.im / (2.0 * nonlin.denom);
            }
            corner[j][s] = 0.5 * coupling;
            corner[s][s] = 1.0;
        }
    }

    let mut rhs_main = pack_stages(&layout, n_dofs, &ev.residual.res_u);
    let mut rhs_border = ev.residual.res_r.clone();
    rhs_main.iter_mut().for_each(|v| *v = -*v);
    rhs_border.iter_mut().for_each(|v| *v = -*v);
    rhs_border.resize(nb, 0.0);

    Ok(NewtonSystem {
        system: BorderedSystem {
            main: jac,
            border_cols,
            border_rows,
            corner,
            rhs_main,
            rhs_border,
        },
        residual: ev.residual,
        clamped_points: clamped,
        n_dofs,
        k,
        position: disc.position.clone(),
    })
}

/// Complex Newton (= direct) solve for the linear equation, `κ = 0`.
fn linear_step(
    disc: &Discretization,
    tau: f64,
    state: &SavState,
    unknowns: &SlabUnknowns,
) -> Result<NewtonUpdate> {
    let ev = evaluate(disc, tau, state, unknowns)?;
    let k = disc.stages();
    let n_dofs = disc.num_dofs();
    let pos = &disc.position;
    let index = |d: usize, j: usize| pos[d] * k + j;
    let n = k * n_dofs;
    let bw = disc.dof_bandwidth * k + k - 1;
    let mut main = BandMatrix::<Complex64>::zeros(n, bw, bw);
    let scale = 2.0 / tau;
    let diff = &disc.scheme.diff_matrix;
    for row_dof in 0..n_dofs {
        for (col_dof, m_val) in disc.mass.row(row_dof) {
            for j in 0..k {
                for m in 0..k {
                    main.add(
                        index(row_dof, j),
                        index(col_dof, m),
                        Complex64::new(0.0, scale * diff[j][m + 1] * m_val),
                    );
                }
            }
        }
        for (col_dof, a_val) in disc.stiffness.row(row_dof) {
            for j in 0..k {
                main.add(index(row_dof, j), index(col_dof, j), Complex64::new(a_val, 0.0));
            }
        }
    }
    let mut rhs_main = vec![ZERO; n];
    for (j, r) in ev.residual.res_u.iter().enumerate() {
        for (d, v) in r.iter().enumerate() {
            rhs_main[index(d, j)] = -v;
        }
    }
    let sys = BorderedSystem {
        main,
        border_cols: vec![vec![ZERO; n]; k],
        border_rows: vec![vec![ZERO; n]; k],
        corner: (0..k)
            .map(|j| (0..k).map(|m| Complex64::new(scale * diff[j][m + 1], 0.0)).collect())
            .collect(),
        rhs_main,
        rhs_border: ev.residual.res_r.iter().map(|r| Complex64::new(-r, 0.0)).collect(),
    };
    let sol = solve_bordered(&sys)?;
    let mut next = unknowns.clone();
    let mut inc: f64 = 0.0;
    for j in 0..k {
        let delta: Vec<Complex64> = (0..n_dofs).map(|d| sol.x_main[index(d, j)]).collect();
        inc = inc.max(disc.mass_norm_sqr(&delta).max(0.0).sqrt());
        for (u, dv) in next.stages[j].0.iter_mut().zip(&delta) {
            *u += dv;
        }
        let dr = sol.x_border[j].re;
        inc = inc.max(dr.abs());
        next.r[j] += dr;
    }
    Ok(NewtonUpdate {
        unknowns: next,
        increment_norm: inc,
        residual_before: ev.residual.max_norm(),
        clamped_points: 0,
    })
}

/// One Newton update of the slab unknowns.
pub fn newton_step(
    disc: &Discretization,
    tau: f64,
    state: &SavState,
    unknowns: &SlabUnknowns,
    full_jacobian: bool,
) -> Result<NewtonUpdate> {
    if disc.nl.is_linear() {
        return linear_step(disc, tau, state, unknowns);
    }
    let ns = assemble_newton_system(disc, tau, state, unknowns, full_jacobian)?;
    let sol = solve_bordered(&ns.system)?;
    let delta = ns.unpack(&sol.x_main);
    let k = disc.stages();
    let mut next = unknowns.clone();
    let mut inc: f64 = 0.0;
    for j in 0..k {
        inc = inc.max(disc.mass_norm_sqr(&delta[j].0).max(0.0).sqrt());
        for (u, dv) in next.stages[j].0.iter_mut().zip(&delta[j].0) {
            *u += dv;
        }
        inc = inc.max(sol.x_border[j].abs());
        next.r[j] += sol.x_border[j];
    }
    Ok(NewtonUpdate {
        unknowns: next,
        increment_norm: inc,
        residual_before: ns.residual.max_norm(),
        clamped_points: ns.clamped_points,
    })
}

/// Result of advancing one slab.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SavState,
    pub stages: SlabUnknowns,
    pub report: StepReport,
}

/// Solve one slab starting from `state` with step `tau` (which may be
/// negative, for backward propagation).
pub fn advance_by(
    disc: &Discretization,
    cfg: &StepperConfig,
    state: &SavState,
    tau: f64,
) -> Result<StepOutcome> {
    if !state.u.is_finite() || !state.r.is_finite() {
        return Err(SolverError::Input("non-finite state".into()));
    }
    let k = disc.stages();
    let mut unknowns = SlabUnknowns::constant(state, k);
    let mut report = StepReport::default();
    let mut clamped = 0usize;
    let mut converged = false;
    for it in 1..=cfg.max_newton_iters {
        let update = newton_step(disc, tau, state, &unknowns, cfg.full_jacobian)?;
        if !update.increment_norm.is_finite() {
            return Err(SolverError::Divergence { iteration: it });
        }
        clamped += update.clamped_points;
        unknowns = update.unknowns;
        report.iterations = it;
        report.increment_history.push(update.increment_norm);
        // a direct solve of the linear equation is exact
        if update.increment_norm <= cfg.newton_tol || disc.nl.is_linear() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolverError::NoConvergence {
            iterations: report.iterations,
            history: report.increment_history,
        });
    }
    report.residual_final = residual(disc, tau, state, &unknowns)?.max_norm();
    if clamped > 0 {
        report
            .warnings
            .push(format!("{clamped} quadrature points used clamped q<3 derivatives"));
    }
    if cfg.report_stages {
        report.stage_r = Some(unknowns.r.clone());
    }
    let e = &disc.scheme.endpoint_weights;
    let mut u_end: Vec<Complex64> = state.u.0.iter().map(|v| v * e[0]).collect();
    for (stage, &w) in unknowns.stages.iter().zip(&e[1..]) {
        for (a, b) in u_end.iter_mut().zip(&stage.0) {
            *a += b * w;
        }
    }
    let r_end = e[0] * state.r + unknowns.r.iter().zip(&e[1..]).map(|(r, w)| r * w).sum::<f64>();
    Ok(StepOutcome {
        state: SavState {
            u: FemVector(u_end),
            r: r_end,
            t: state.t + tau,
        },
        stages: unknowns,
        report,
    })
}

/// Advance one slab of length `cfg.tau`.
pub fn advance(disc: &Discretization, cfg: &StepperConfig, state: &SavState) -> Result<StepOutcome> {
    advance_by(disc, cfg, state, cfg.tau)
}

/// What an observer sees after each slab.
pub struct SlabView<'a> {
    /// 1-based slab index.
    pub n: usize,
    pub tau: f64,
    pub disc: &'a Discretization,
    pub previous: &'a SavState,
    pub outcome: &'a StepOutcome,
}

impl SlabView<'_> {
    pub fn stage_times(&self) -> Vec<f64> {
        let t0 = self.previous.t;
        self.disc
            .scheme
            .rule
            .nodes
            .iter()
            .map(|c| t0 + 0.5 * (1.0 + c) * self.tau)
            .collect()
    }
}

/// Callback invoked on the integration thread.
pub trait Observer {
    fn initial(&mut self, _disc: &Discretization, _state: &SavState) -> Result<()> {
        Ok(())
    }
    fn observe(&mut self, view: &SlabView<'_>) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: SavState,
    pub final_state: SavState,
    pub reports: Vec<StepReport>,
}

/// Number of slabs `N` with `N τ = T`, rejecting non-integral ratios.
pub fn step_count(final_time: f64, tau: f64) -> Result<usize> {
    if !(final_time >= 0.0) || !final_time.is_finite() {
        return Err(SolverError::config("T", format!("must be non-negative, got {final_time}")));
    }
    let ratio = final_time / tau;
    let n = ratio.round();
    if (n - ratio).abs() > 1e-9 * ratio.max(1.0) {
        return Err(SolverError::config(
            "T",
            format!("T/tau = {ratio} is not an integer"),
        ));
    }
    Ok(n as usize)
}

/// Run the full trajectory from the interpolant of `u0`.
pub fn integrate(
    disc: &Discretization,
    cfg: &StepperConfig,
    u0: impl Fn(f64) -> Complex64,
    final_time: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.k != disc.stages() {
        return Err(SolverError::config("k", "stepper and discretization disagree"));
    }
    let steps = step_count(final_time, cfg.tau)?;
    let initial = disc.initial_state(u0)?;
    for obs in observers.iter_mut() {
        obs.initial(disc, &initial)?;
    }
    let mut state = initial.clone();
    let mut reports = Vec::with_capacity(steps);
    for n in 1..=steps {
        let outcome = advance(disc, cfg, &state).map_err(|e| SolverError::Step {
            slab: n,
            source: Box::new(e),
        })?;
        // keep times on the exact grid
        let mut outcome = outcome;
        outcome.state.t = n as f64 * cfg.tau;
        let view = SlabView {
            n,
            tau: cfg.tau,
            disc,
            previous: &state,
            outcome: &outcome,
        };
        for obs in observers.iter_mut() {
            obs.observe(&view)?;
        }
        reports.push(outcome.report);
        state = outcome.state;
    }
    Ok(Trajectory {
        initial,
        final_state: state,
        reports,
    })
}
