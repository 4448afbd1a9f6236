//! Direct solvers for the per-slab Newton systems.
//!
//! The main block is banded (1D elements, stage-coupled, periodic dofs
//! folded into a band) and is factored by LU with partial pivoting in the
//! LAPACK `gbtrf` layout. The `k` (or `2k`) scalar unknowns coupled to every
//! row form a dense border and are eliminated through the Schur complement.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;
use num_traits::{One, Zero};

use crate::error::{Result, SolverError};

/// Normwise backward error accepted by [`solve_bordered`].
pub const RESIDUAL_BOUND: f64 = 1e-11;

/// Field the solvers work over (`f64` or `Complex64`).
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
}

fn max_modulus<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.modulus()).fold(0.0, f64::max)
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored with
/// `kl` extra rows of room for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ld,
            data: vec![T::zero(); ld * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0);
        for i in 0..n {
            m.add(i, i, T::one());
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ld + self.kl + self.ku + i - j
    }

    /// `A[i][j] += v`. Panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            T::zero()
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![T::zero(); self.n];
        for (j, &xj) in x.iter().enumerate() {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.data[self.idx(i, j)] * xj;
            }
        }
        y
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, r) in rows.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *r += self.data[self.idx(i, j)].modulus();
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// LU factorization with partial pivoting.
    pub fn factor(&self) -> Result<BandLu<T>> {
        let mut a = self.clone();
        let (n, kl, ku, ld) = (a.n, a.kl, a.ku, a.ld);
        let mut pivots = vec![0usize; n];
        for j in 0..n {
            let last_row = (j + kl).min(n - 1);
            let col = j * ld + kl + ku;
            // pivot search in column j, rows j..=last_row
            let mut p = j;
            let mut best = a.data[col].modulus();
            for i in j + 1..=last_row {
                let m = a.data[col + i - j].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(SolverError::Singular { pivot: j });
            }
            pivots[j] = p;
            let last_col = (j + ku + kl).min(n - 1);
            if p != j {
                for c in j..=last_col {
                    let (x, y) = (a.idx(j, c), a.idx(p, c));
                    a.data.swap(x, y);
                }
            }
            let inv = T::one() / a.data[col];
            for i in j + 1..=last_row {
                a.data[col + i - j] *= inv;
            }
            if last_row == j {
                continue;
            }
            for c in j + 1..=last_col {
                let pivot_row_val = a.data[a.idx(j, c)];
                if pivot_row_val == T::zero() {
                    continue;
                }
                let base_c = c * ld + kl + ku;
                for i in j + 1..=last_row {
                    let l = a.data[col + i - j];
                    a.data[base_c + i - c] -= l * pivot_row_val;
                }
            }
        }
        Ok(BandLu { lu: a, pivots })
    }
}

/// Band LU factors; reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    lu: BandMatrix<T>,
    pivots: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    /// Overwrite `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let a = &self.lu;
        let (n, kl, ku, ld) = (a.n, a.kl, a.ku, a.ld);
        assert_eq!(b.len(), n);
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj == T::zero() {
                continue;
            }
            let col = j * ld + kl + ku;
            let last_row = (j + kl).min(n - 1);
            for i in j + 1..=last_row {
                let l = a.data[col + i - j];
                b[i] -= l * bj;
            }
        }
        for j in (0..n).rev() {
            let col = j * ld + kl + ku;
            b[j] = b[j] / a.data[col];
            let bj = b[j];
            let first_row = j.saturating_sub(ku + kl);
            for i in first_row..j {
                b[i] -= a.data[col + i - j] * bj;
            }
        }
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Factor a band matrix (free-function form).
pub fn factor<T: Scalar>(k: &BandMatrix<T>) -> Result<BandLu<T>> {
    k.factor()
}

/// Dense LU with partial pivoting for the small Schur complement.
#[derive(Debug, Clone)]
pub struct DenseLu<T> {
    lu: Vec<Vec<T>>,
    pivots: Vec<usize>,
}

impl<T: Scalar> DenseLu<T> {
    pub fn new(mut a: Vec<Vec<T>>) -> Result<Self> {
        let n = a.len();
        let mut pivots = vec![0; n];
        for j in 0..n {
            let (p, best) = (j..n)
                .map(|i| (i, a[i][j].modulus()))
                .fold((j, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 || !best.is_finite() {
                return Err(SolverError::Singular { pivot: j });
            }
            pivots[j] = p;
            a.swap(j, p);
            let inv = T::one() / a[j][j];
            for i in j + 1..n {
                let l = a[i][j] * inv;
                a[i][j] = l;
                for c in j + 1..n {
                    let v = a[j][c];
                    a[i][c] -= l * v;
                }
            }
        }
        Ok(DenseLu { lu: a, pivots })
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.lu.len();
        let mut x = rhs.to_vec();
        // rows were swapped in full, so all interchanges precede substitution
        for (j, &p) in self.pivots.iter().enumerate() {
            x.swap(j, p);
        }
        for j in 0..n {
            for i in j + 1..n {
                let v = x[j];
                x[i] -= self.lu[i][j] * v;
            }
        }
        for j in (0..n).rev() {
            for c in j + 1..n {
                let v = x[c];
                x[j] -= self.lu[j][c] * v;
            }
            x[j] = x[j] / self.lu[j][j];
        }
        x
    }
}

/// `[K B; C D] [x; y] = [f; g]` with `K` banded and a dense border of width `nb`.
#[derive(Debug, Clone)]
pub struct BorderedSystem<T> {
    pub main: BandMatrix<T>,
    /// `nb` columns of length `n`.
    pub border_cols: Vec<Vec<T>>,
    /// `nb` rows of length `n`.
    pub border_rows: Vec<Vec<T>>,
    /// `nb × nb`.
    pub corner: Vec<Vec<T>>,
    pub rhs_main: Vec<T>,
    pub rhs_border: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BorderedSolution<T> {
    pub x_main: Vec<T>,
    pub x_border: Vec<T>,
    /// Normwise backward error `‖r‖∞ / (‖A‖∞‖x‖∞ + ‖b‖∞)` of the full system.
    pub residual: f64,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl<T: Scalar> BorderedSystem<T> {
    pub fn border_width(&self) -> usize {
        self.corner.len()
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.main.dim();
        let nb = self.corner.len();
        let ok = self.border_cols.len() == nb
            && self.border_rows.len() == nb
            && self.border_cols.iter().all(|c| c.len() == n)
            && self.border_rows.iter().all(|r| r.len() == n)
            && self.corner.iter().all(|r| r.len() == nb)
            && self.rhs_main.len() == n
            && self.rhs_border.len() == nb;
        if ok {
            Ok(())
        } else {
            Err(SolverError::Input("inconsistent bordered system dimensions".into()))
        }
    }

    /// Apply the full bordered operator.
    pub fn apply(&self, x_main: &[T], x_border: &[T]) -> (Vec<T>, Vec<T>) {
        let mut top = self.main.matvec(x_main);
        for (col, &y) in self.border_cols.iter().zip(x_border) {
            for (t, &c) in top.iter_mut().zip(col) {
                *t += c * y;
            }
        }
        let bottom = self
            .border_rows
            .iter()
            .zip(&self.corner)
            .map(|(row, d)| dot(row, x_main) + dot(d, x_border))
            .collect();
        (top, bottom)
    }

    fn backward_error(&self, x_main: &[T], x_border: &[T]) -> f64 {
        let (top, bottom) = self.apply(x_main, x_border);
        let r = top
            .iter()
            .zip(&self.rhs_main)
            .chain(bottom.iter().zip(&self.rhs_border))
            .map(|(a, &b)| (*a - b).modulus())
            .fold(0.0, f64::max);
        let row_norm = |i: usize| -> f64 {
            self.border_cols.iter().map(|c| c[i].modulus()).sum::<f64>()
        };
        let mut a_norm = self.main.norm_inf() + (0..self.main.dim()).map(row_norm).fold(0.0, f64::max);
        for (row, d) in self.border_rows.iter().zip(&self.corner) {
            let s: f64 = row.iter().chain(d).map(|x| x.modulus()).sum();
            a_norm = a_norm.max(s);
        }
        let x_norm = max_modulus(x_main).max(max_modulus(x_border));
        let b_norm = max_modulus(&self.rhs_main).max(max_modulus(&self.rhs_border));
        let denom = a_norm * x_norm + b_norm;
        if denom == 0.0 {
            0.0
        } else {
            r / denom
        }
    }
}

/// Block elimination: `K W = B`, `K y = f`, `S = D - C W`,
/// `S x_b = g - C y`, `x_m = y - W x_b`.
pub fn solve_bordered<T: Scalar>(sys: &BorderedSystem<T>) -> Result<BorderedSolution<T>> {
    sys.check_shapes()?;
    let lu = sys.main.factor()?;
    solve_bordered_with(sys, &lu)
}

/// As [`solve_bordered`] with a precomputed factorization of the main block.
pub fn solve_bordered_with<T: Scalar>(
    sys: &BorderedSystem<T>,
    lu: &BandLu<T>,
) -> Result<BorderedSolution<T>> {
    sys.check_shapes()?;
    let y = lu.solve(&sys.rhs_main);
    let nb = sys.border_width();
    let x_main;
    let x_border;
    if nb == 0 {
        x_main = y;
        x_border = Vec::new();
    } else {
        let w: Vec<Vec<T>> = sys.border_cols.iter().map(|c| lu.solve(c)).collect();
        let schur: Vec<Vec<T>> = (0..nb)
            .map(|i| {
                (0..nb)
                    .map(|j| sys.corner[i][j] - dot(&sys.border_rows[i], &w[j]))
                    .collect()
            })
            .collect();
        let rhs: Vec<T> = (0..nb)
            .map(|i| sys.rhs_border[i] - dot(&sys.border_rows[i], &y))
            .collect();
        let s_lu = DenseLu::new(schur).map_err(|e| match e {
            SolverError::Singular { pivot } => SolverError::Singular {
                pivot: sys.main.dim() + pivot,
            },
            other => other,
        })?;
        x_border = s_lu.solve(&rhs);
        let mut xm = y;
        for (wj, &xb) in w.iter().zip(&x_border) {
            for (x, &wv) in xm.iter_mut().zip(wj) {
                *x -= wv * xb;
            }
        }
        x_main = xm;
    }
    let residual = sys.backward_error(&x_main, &x_border);
    if !(residual <= RESIDUAL_BOUND) {
        return Err(SolverError::Inaccurate {
            residual,
            bound: RESIDUAL_BOUND,
        });
    }
    Ok(BorderedSolution {
        x_main,
        x_border,
        residual,
    })
}
