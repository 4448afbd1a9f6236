//! Uniform 1D meshes and complex-valued continuous Lagrange finite elements.
//!
//! Basis functions are real, so the mass and stiffness operators are real
//! symmetric; they act on complex coefficient vectors. Local dofs within an
//! element sit at equispaced reference points `l/p`, `l = 0..=p`.

use num_complex::Complex64;

use crate::error::{Result, SolverError};
use crate::time_collocation::legendre_gauss;

/// Largest supported element degree.
pub const MAX_DEGREE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// `x = a` and `x = b` are identified.
    Periodic,
    /// Homogeneous Dirichlet: `u(a) = u(b) = 0`, boundary values not stored.
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh1D {
    pub a: f64,
    pub b: f64,
    pub num_elements: usize,
    pub h: f64,
    pub bc: BoundaryCondition,
}

impl Mesh1D {
    pub fn length(&self) -> f64 {
        self.b - self.a
    }
}

/// Complex coefficient vector of a finite element function.
#[derive(Debug, Clone, PartialEq)]
pub struct FemVector(pub Vec<Complex64>);

impl FemVector {
    pub fn zeros(n: usize) -> Self {
        FemVector(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    /// Euclidean inner product `Σ a_i conj(b_i)`.
    pub fn dot(&self, other: &FemVector) -> Complex64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b.conj()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Real symmetric sparse operator in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Build from unsorted `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseOperator {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nonzeros of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| self.row(i).map(|(c, v)| x[c] * v).sum())
            .collect()
    }

    /// `x* · Op · x`.
    pub fn quadratic_form(&self, x: &[Complex64]) -> Complex64 {
        self.apply(x)
            .iter()
            .zip(x)
            .map(|(y, xi)| xi.conj() * y)
            .sum()
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                row[c] = v;
            }
        }
        d
    }
}

/// Reference-element quadrature with basis values tabulated at the points.
#[derive(Debug, Clone)]
pub struct ElementQuadrature {
    /// Points in `[0, 1]`.
    pub points: Vec<f64>,
    /// Weights summing to 1; multiply by `h` for physical integrals.
    pub weights: Vec<f64>,
    /// `phi[q][l]`: local basis `l` at point `q`.
    pub phi: Vec<Vec<f64>>,
    /// `dphi[q][l]`: reference derivative; divide by `h`.
    pub dphi: Vec<Vec<f64>>,
}

/// Continuous Lagrange finite element space of degree `p` on a uniform mesh.
#[derive(Debug, Clone)]
pub struct FemSpace {
    pub mesh: Mesh1D,
    pub degree: usize,
    pub num_dofs: usize,
    /// Global dof of each local node; `None` for constrained Dirichlet nodes.
    pub dof_map: Vec<Vec<Option<usize>>>,
    /// Reference node positions in `[0, 1]`.
    pub node_coords: Vec<f64>,
}

/// Build the space on `[a, b]` with `m` elements of degree `p`.
pub fn build_space(a: f64, b: f64, m: usize, p: usize, bc: BoundaryCondition) -> Result<FemSpace> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(SolverError::config("domain", format!("need a < b, got [{a}, {b}]")));
    }
    if m < 2 {
        return Err(SolverError::config("M", format!("need at least 2 elements, got {m}")));
    }
    if !(1..=MAX_DEGREE).contains(&p) {
        return Err(SolverError::config("p", format!("degree must be in 1..={MAX_DEGREE}, got {p}")));
    }
    let mesh = Mesh1D {
        a,
        b,
        num_elements: m,
        h: (b - a) / m as f64,
        bc,
    };
    let total_nodes = p * m + 1;
    let node_to_dof = |node: usize| -> Option<usize> {
        match bc {
            BoundaryCondition::Periodic => Some(node % (p * m)),
            BoundaryCondition::Dirichlet => {
                if node == 0 || node == total_nodes - 1 {
                    None
                } else {
                    Some(node - 1)
                }
            }
        }
    };
    let dof_map = (0..m)
        .map(|e| (0..=p).map(|l| node_to_dof(e * p + l)).collect())
        .collect();
    let num_dofs = match bc {
        BoundaryCondition::Periodic => p * m,
        BoundaryCondition::Dirichlet => p * m - 1,
    };
    let node_coords = (0..=p).map(|l| l as f64 / p as f64).collect();
    Ok(FemSpace {
        mesh,
        degree: p,
        num_dofs,
        dof_map,
        node_coords,
    })
}

impl FemSpace {
    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements
    }

    pub fn h(&self) -> f64 {
        self.mesh.h
    }

    /// Local Lagrange basis values at reference point `xi ∈ [0, 1]`.
    pub fn basis_values(&self, xi: f64) -> Vec<f64> {
        let nodes = &self.node_coords;
        (0..nodes.len())
            .map(|l| {
                nodes
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != l)
                    .map(|(_, &xm)| (xi - xm) / (nodes[l] - xm))
                    .product()
            })
            .collect()
    }

    /// Local basis derivatives with respect to the reference coordinate.
    pub fn basis_derivatives(&self, xi: f64) -> Vec<f64> {
        let nodes = &self.node_coords;
        let n = nodes.len();
        (0..n)
            .map(|l| {
                (0..n)
                    .filter(|&s| s != l)
                    .map(|s| {
                        let mut term = 1.0 / (nodes[l] - nodes[s]);
                        for m in 0..n {
                            if m != l && m != s {
                                term *= (xi - nodes[m]) / (nodes[l] - nodes[m]);
                            }
                        }
                        term
                    })
                    .sum()
            })
            .collect()
    }

    /// `nq`-point Gauss rule mapped to `[0, 1]` with tabulated basis.
    pub fn element_quadrature(&self, nq: usize) -> ElementQuadrature {
        let rule = legendre_gauss(nq);
        let points: Vec<f64> = rule.nodes.iter().map(|&c| 0.5 * (c + 1.0)).collect();
        let weights = rule.weights.iter().map(|w| 0.5 * w).collect();
        let phi = points.iter().map(|&x| self.basis_values(x)).collect();
        let dphi = points.iter().map(|&x| self.basis_derivatives(x)).collect();
        ElementQuadrature {
            points,
            weights,
            phi,
            dphi,
        }
    }

    /// Physical coordinate of element `e`'s reference point `xi`.
    pub fn physical(&self, e: usize, xi: f64) -> f64 {
        self.mesh.a + (e as f64 + xi) * self.mesh.h
    }

    /// Physical coordinate of global dof `i`.
    pub fn dof_coordinate(&self, i: usize) -> f64 {
        let node = match self.mesh.bc {
            BoundaryCondition::Periodic => i,
            BoundaryCondition::Dirichlet => i + 1,
        };
        self.mesh.a + node as f64 * self.mesh.h / self.degree as f64
    }

    /// Local coefficient values of `v` on element `e` (zero at Dirichlet nodes).
    pub fn local_coefficients(&self, v: &[Complex64], e: usize, out: &mut [Complex64]) {
        for (o, d) in out.iter_mut().zip(&self.dof_map[e]) {
            *o = d.map_or(Complex64::new(0.0, 0.0), |i| v[i]);
        }
    }

    fn assemble_bilinear(&self, derivative: bool) -> SparseOperator {
        let quad = self.element_quadrature(self.degree + 1);
        let h = self.mesh.h;
        let n = self.degree + 1;
        let mut local = vec![vec![0.0; n]; n];
        for (q, &w) in quad.weights.iter().enumerate() {
            let (basis, scale) = if derivative {
                (&quad.dphi[q], w / h)
            } else {
                (&quad.phi[q], w * h)
            };
            for i in 0..n {
                for j in 0..n {
                    local[i][j] += scale * basis[i] * basis[j];
                }
            }
        }
        let mut triplets = Vec::with_capacity(self.num_elements() * n * n);
        for dofs in &self.dof_map {
            for (i, di) in dofs.iter().enumerate() {
                let Some(di) = di else { continue };
                for (j, dj) in dofs.iter().enumerate() {
                    if let Some(dj) = dj {
                        triplets.push((*di, *dj, local[i][j]));
                    }
                }
            }
        }
        SparseOperator::from_triplets(self.num_dofs, triplets)
    }

    /// Order of dofs that keeps periodic operators banded: alternates from
    /// both ends of the domain so the wrap-around coupling becomes local.
    /// Returns `position[dof]`.
    pub fn banded_ordering(&self) -> Vec<usize> {
        let n = self.num_dofs;
        match self.mesh.bc {
            BoundaryCondition::Dirichlet => (0..n).collect(),
            BoundaryCondition::Periodic => {
                let mut position = vec![0; n];
                let (mut lo, mut hi) = (0usize, n - 1);
                let mut pos = 0;
                while lo <= hi {
                    position[lo] = pos;
                    pos += 1;
                    if hi != lo {
                        position[hi] = pos;
                        pos += 1;
                    }
                    lo += 1;
                    if hi == 0 {
                        break;
                    }
                    hi -= 1;
                }
                position
            }
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(f64) -> Complex64) -> Result<FemVector> {
        let mut out = Vec::with_capacity(self.num_dofs);
        for i in 0..self.num_dofs {
            let x = self.dof_coordinate(i);
            let v = f(x);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(SolverError::Input(format!("non-finite sample at x = {x}")));
            }
            out.push(v);
        }
        Ok(FemVector(out))
    }

    /// Element index and reference coordinate of `x`.
    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let Mesh1D { a, b, h, .. } = self.mesh;
        if !(x >= a && x <= b) {
            return Err(SolverError::Input(format!("x = {x} outside [{a}, {b}]")));
        }
        let s = (x - a) / h;
        let e = (s.floor() as usize).min(self.num_elements() - 1);
        Ok((e, s - e as f64))
    }

    /// Value and spatial derivative of `v` at `x`.
    pub fn evaluate(&self, v: &FemVector, x: f64) -> Result<(Complex64, Complex64)> {
        let (e, xi) = self.locate(x)?;
        let mut c = vec![Complex64::new(0.0, 0.0); self.degree + 1];
        self.local_coefficients(&v.0, e, &mut c);
        let phi = self.basis_values(xi);
        let dphi = self.basis_derivatives(xi);
        let val = c.iter().zip(&phi).map(|(a, b)| a * b).sum();
        let der: Complex64 = c.iter().zip(&dphi).map(|(a, b)| a * b).sum();
        Ok((val, der / self.mesh.h))
    }

    /// Visit every quadrature point: `(x, weight·h, u, u')`.
    pub fn for_each_quadrature_point(
        &self,
        v: &[Complex64],
        quad: &ElementQuadrature,
        mut visit: impl FnMut(usize, usize, f64, f64, Complex64, Complex64),
    ) {
        let h = self.mesh.h;
        let mut c = vec![Complex64::new(0.0, 0.0); self.degree + 1];
        for e in 0..self.num_elements() {
            self.local_coefficients(v, e, &mut c);
            for (q, &w) in quad.weights.iter().enumerate() {
                let mut u = Complex64::new(0.0, 0.0);
                let mut du = Complex64::new(0.0, 0.0);
                for l in 0..c.len() {
                    u += c[l] * quad.phi[q][l];
                    du += c[l] * quad.dphi[q][l];
                }
                visit(e, q, self.physical(e, quad.points[q]), w * h, u, du / h);
            }
        }
    }

    /// `Σ_elements` of an `nq`-point Gauss rule applied to `density(u, u', x)`.
    pub fn integrate_density(
        &self,
        v: &FemVector,
        density: impl Fn(Complex64, Complex64, f64) -> f64,
        nq: usize,
    ) -> Result<f64> {
        if nq < 1 {
            return Err(SolverError::config("nq", "need at least one quadrature point"));
        }
        let quad = self.element_quadrature(nq);
        let mut total = 0.0;
        self.for_each_quadrature_point(&v.0, &quad, |_, _, x, w, u, du| {
            total += w * density(u, du, x);
        });
        Ok(total)
    }

    /// `(‖v - exact‖_{L²}, ‖v - exact‖_{H¹})` with `p + 3` points per element.
    pub fn error_norms(
        &self,
        v: &FemVector,
        exact: impl Fn(f64) -> Complex64,
        exact_grad: impl Fn(f64) -> Complex64,
    ) -> (f64, f64) {
        let quad = self.element_quadrature(self.degree + 3);
        let mut l2 = 0.0;
        let mut semi = 0.0;
        self.for_each_quadrature_point(&v.0, &quad, |_, _, x, w, u, du| {
            l2 += w * (u - exact(x)).norm_sqr();
            semi += w * (du - exact_grad(x)).norm_sqr();
        });
        (l2.sqrt(), (l2 + semi).sqrt())
    }
}

/// `∫ φ_i φ_j dx`.
pub fn assemble_mass(space: &FemSpace) -> SparseOperator {
    space.assemble_bilinear(false)
}

/// `∫ φ_i' φ_j' dx`.
pub fn assemble_stiffness(space: &FemSpace) -> SparseOperator {
    space.assemble_bilinear(true)
}
