//! Temporal machinery on a single slab `[t_{n-1}, t_n]`.
//!
//! Everything is built on the reference slab `[-1, 1]`. A degree-`k` slab
//! polynomial is stored by its values at the `k + 1` collocation nodes
//! `{-1} ∪ {c_1, …, c_k}` (left endpoint plus the Gauss–Legendre points), so
//! the differentiation matrix and endpoint weights are shared by every slab
//! of a run. Callers apply the `2/τ` chain-rule factor.
//!
//! The temporal L² and Ritz projections are provided for verification; the
//! stepper itself never calls them.

use num_complex::Complex64;

use crate::error::{Result, SolverError};

/// Largest number of temporal collocation points accepted by [`gauss_rule`].
pub const MAX_STAGES: usize = 8;

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for m in 2..=n {
        let m = m as f64;
        let next = ((2.0 * m - 1.0) * x * p - (m - 1.0) * p_prev) / m;
        p_prev = p;
        p = next;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // P_n'(±1) = (±1)^{n-1} n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p - p_prev) / (x * x - 1.0)
    };
    (p, dp)
}

/// A `k`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate `f` over `[lo, hi]`.
    pub fn integrate(&self, lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&c, &w)| w * f(mid + half * c))
            .sum::<f64>()
            * half
    }
}

/// Gauss–Legendre rule with `n` points and no upper limit on `n`; used for
/// spatial quadrature where the point count is derived from the FE degree.
pub(crate) fn legendre_gauss(n: usize) -> GaussRule {
    assert!(n >= 1);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let nf = n as f64;
    for i in 1..=n {
        // Chebyshev initial guess, then Newton on P_n
        let mut x = -((2.0 * i as f64 - 1.0) * std::f64::consts::PI / (2.0 * nf)).cos();
        for _ in 0..50 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    // enforce exact symmetry about the origin
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

/// The `k`-point Gauss–Legendre rule used for temporal collocation.
pub fn gauss_rule(k: usize) -> Result<GaussRule> {
    if !(1..=MAX_STAGES).contains(&k) {
        return Err(SolverError::config(
            "k",
            format!("number of Gauss points must be in 1..={MAX_STAGES}, got {k}"),
        ));
    }
    Ok(legendre_gauss(k))
}

/// A slab `[t0, t1]` with `t1 > t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub t0: f64,
    pub t1: f64,
}

impl Slab {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t1 - t0 > 0.0) || !t0.is_finite() || !t1.is_finite() {
            return Err(SolverError::config(
                "slab",
                format!("degenerate slab [{t0}, {t1}]"),
            ));
        }
        Ok(Slab { t0, t1 })
    }

    pub fn tau(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Physical time → reference coordinate in `[-1, 1]`.
    pub fn to_reference(&self, t: f64) -> f64 {
        (2.0 * t - self.t0 - self.t1) / self.tau()
    }

    pub fn from_reference(&self, x: f64) -> f64 {
        0.5 * (self.t0 + self.t1) + 0.5 * self.tau() * x
    }
}

/// Shifted Legendre polynomial `L_k(t) = P_k((2t - t0 - t1)/τ)` on `slab`.
pub fn shifted_legendre(k: usize, t: f64, slab: Slab) -> Result<f64> {
    if !(slab.tau() > 0.0) {
        return Err(SolverError::config("slab", "non-positive length"));
    }
    Ok(legendre(k, slab.to_reference(t)).0)
}

/// Lagrange interpolation data on a fixed node set.
#[derive(Debug, Clone)]
struct LagrangeNodes {
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl LagrangeNodes {
    fn new(nodes: Vec<f64>) -> Self {
        let bary = (0..nodes.len())
            .map(|m| {
                1.0 / nodes
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != m)
                    .map(|(_, &x)| nodes[m] - x)
                    .product::<f64>()
            })
            .collect();
        LagrangeNodes { nodes, bary }
    }

    fn values(&self, x: f64) -> Vec<f64> {
        let n = self.nodes.len();
        (0..n)
            .map(|m| {
                let mut v = 1.0;
                for l in 0..n {
                    if l != m {
                        v *= (x - self.nodes[l]) / (self.nodes[m] - self.nodes[l]);
                    }
                }
                v
            })
            .collect()
    }

    fn derivatives(&self, x: f64) -> Vec<f64> {
        let n = self.nodes.len();
        (0..n)
            .map(|m| {
                let mut total = 0.0;
                for skip in 0..n {
                    if skip == m {
                        continue;
                    }
                    let mut term = 1.0 / (self.nodes[m] - self.nodes[skip]);
                    for l in 0..n {
                        if l != m && l != skip {
                            term *= (x - self.nodes[l]) / (self.nodes[m] - self.nodes[l]);
                        }
                    }
                    total += term;
                }
                total
            })
            .collect()
    }

    /// Derivative matrix at the nodes themselves, rows summing to zero exactly.
    fn nodal_derivatives(&self) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        (0..n)
            .map(|j| {
                let mut row = vec![0.0; n];
                let mut diag = 0.0;
                for m in 0..n {
                    if m != j {
                        row[m] = self.bary[m] / self.bary[j] / (self.nodes[j] - self.nodes[m]);
                        diag -= row[m];
                    }
                }
                row[j] = diag;
                row
            })
            .collect()
    }
}

/// Gauss collocation scheme of order `k`: nodes, differentiation matrix and
/// endpoint extrapolation weights on the reference slab.
#[derive(Debug, Clone)]
pub struct CollocationScheme {
    pub rule: GaussRule,
    /// `k × (k+1)`: maps `[u(-1), u(c_1), …, u(c_k)]` to `[u'(c_1), …, u'(c_k)]`
    /// on the reference slab.
    pub diff_matrix: Vec<Vec<f64>>,
    /// `u(+1) = Σ e_m u_m`.
    pub endpoint_weights: Vec<f64>,
    basis: LagrangeNodes,
}

/// Build the collocation scheme for `k` stages.
pub fn collocation_scheme(k: usize) -> Result<CollocationScheme> {
    let rule = gauss_rule(k)?;
    let mut nodes = Vec::with_capacity(k + 1);
    nodes.push(-1.0);
    nodes.extend_from_slice(&rule.nodes);
    let basis = LagrangeNodes::new(nodes);
    let full = basis.nodal_derivatives();
    let diff_matrix = full[1..].to_vec();
    let endpoint_weights = basis.values(1.0);
    Ok(CollocationScheme {
        rule,
        diff_matrix,
        endpoint_weights,
        basis,
    })
}

impl CollocationScheme {
    pub fn stages(&self) -> usize {
        self.rule.len()
    }

    /// Reference nodes `{-1, c_1, …, c_k}`.
    pub fn nodes(&self) -> &[f64] {
        &self.basis.nodes
    }

    /// Lagrange basis values at reference coordinate `x`.
    pub fn basis_values(&self, x: f64) -> Vec<f64> {
        self.basis.values(x)
    }

    /// Lagrange basis derivatives (reference variable) at `x`.
    pub fn basis_derivatives(&self, x: f64) -> Vec<f64> {
        self.basis.derivatives(x)
    }

    /// Physical stage times of `slab`.
    pub fn stage_times(&self, slab: Slab) -> Vec<f64> {
        self.rule
            .nodes
            .iter()
            .map(|&c| slab.from_reference(c))
            .collect()
    }
}

/// A degree-≤k polynomial in time with vector (or scalar, `dim == 1`)
/// complex values, stored at the collocation nodes of its slab.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabPolynomial {
    pub slab: Slab,
    /// `values[m]` is the value at node `m` of `{t_{n-1}} ∪ {t_{nj}}`.
    pub values: Vec<Vec<Complex64>>,
}

impl SlabPolynomial {
    /// Build by sampling `f` at the nodes of `scheme`.
    pub fn sample(
        scheme: &CollocationScheme,
        slab: Slab,
        mut f: impl FnMut(f64) -> Vec<Complex64>,
    ) -> Self {
        let values = scheme
            .nodes()
            .iter()
            .map(|&x| f(slab.from_reference(x)))
            .collect();
        SlabPolynomial { slab, values }
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn degree(&self) -> usize {
        self.values.len() - 1
    }

    fn combine(&self, coeffs: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim()];
        for (c, v) in coeffs.iter().zip(&self.values) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x * c;
            }
        }
        out
    }

    /// Value at physical time `t`.
    pub fn eval(&self, scheme: &CollocationScheme, t: f64) -> Vec<Complex64> {
        // the initial value is returned exactly
        if t == self.slab.t0 {
            return self.values[0].clone();
        }
        self.combine(&scheme.basis_values(self.slab.to_reference(t)))
    }

    /// Time derivative at physical time `t`.
    pub fn eval_derivative(&self, scheme: &CollocationScheme, t: f64) -> Vec<Complex64> {
        let scale = 2.0 / self.slab.tau();
        let mut d = self.combine(&scheme.basis_derivatives(self.slab.to_reference(t)));
        d.iter_mut().for_each(|x| *x *= scale);
        d
    }
}

/// Temporal L² projection onto degree `k-1`, returned in the same nodal
/// representation. Removes the `L_k` component: `u - Pu = φ L_k`.
pub fn temporal_l2_project(samples: &SlabPolynomial, scheme: &CollocationScheme) -> SlabPolynomial {
    let k = scheme.stages();
    // k+1 points integrate the degree-2k product u·L_k exactly
    let quad = legendre_gauss(k + 1);
    let dim = samples.dim();
    let mut phi = vec![Complex64::new(0.0, 0.0); dim];
    for (&x, &w) in quad.nodes.iter().zip(&quad.weights) {
        let lk = legendre(k, x).0;
        let u = samples.combine(&scheme.basis_values(x));
        for (p, v) in phi.iter_mut().zip(&u) {
            *p += v * (w * lk);
        }
    }
    // ∫_{-1}^{1} P_k² = 2/(2k+1)
    let norm = (2 * k + 1) as f64 / 2.0;
    phi.iter_mut().for_each(|p| *p *= norm);
    let values = scheme
        .nodes()
        .iter()
        .zip(&samples.values)
        .map(|(&x, v)| {
            let lk = legendre(k, x).0;
            v.iter().zip(&phi).map(|(a, p)| a - p * lk).collect()
        })
        .collect();
    SlabPolynomial {
        slab: samples.slab,
        values,
    }
}

/// L² projection of a general function onto degree `k-1` on `slab`, using
/// `nq`-point quadrature. Returns the Legendre coefficients (reference basis).
pub fn l2_project_function(
    f: impl Fn(f64) -> Complex64,
    k: usize,
    slab: Slab,
    nq: usize,
) -> Vec<Complex64> {
    let quad = legendre_gauss(nq);
    (0..k)
        .map(|j| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&x, &w) in quad.nodes.iter().zip(&quad.weights) {
                acc += f(slab.from_reference(x)) * (w * legendre(j, x).0);
            }
            acc * ((2 * j + 1) as f64 / 2.0)
        })
        .collect()
}

/// Evaluate a Legendre expansion (reference basis) at physical time `t`.
pub fn eval_legendre_series(coeffs: &[Complex64], slab: Slab, t: f64) -> Complex64 {
    let x = slab.to_reference(t);
    coeffs
        .iter()
        .enumerate()
        .map(|(j, c)| c * legendre(j, x).0)
        .sum()
}

/// Temporal Ritz projection of a scalar function: matches `f(t0)` and has
/// time derivative equal to the L² projection of `f'` onto degree `k-1`.
/// Without an analytic derivative a central difference with step 1e-7 is used.
pub fn temporal_ritz_project(
    f: &dyn Fn(f64) -> Complex64,
    derivative: Option<&dyn Fn(f64) -> Complex64>,
    scheme: &CollocationScheme,
    slab: Slab,
) -> SlabPolynomial {
    let k = scheme.stages();
    let fd = |t: f64| (f(t + 1e-7) - f(t - 1e-7)) / 2e-7;
    let df = |t: f64| match derivative {
        Some(d) => d(t),
        None => fd(t),
    };
    let quad = legendre_gauss(k + 2);
    let half = 0.5 * slab.tau();
    // coefficient_j = ∫ L_j f' dt / ∫ L_j² dt, with ∫ L_j² = τ/(2j+1)
    let coeffs: Vec<Complex64> = (0..k)
        .map(|j| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&x, &w) in quad.nodes.iter().zip(&quad.weights) {
                acc += df(slab.from_reference(x)) * (w * half * legendre(j, x).0);
            }
            acc * ((2 * j + 1) as f64 / slab.tau())
        })
        .collect();
    let start = f(slab.t0);
    // ∫_{t0}^{t} L_j = (τ/2) (P_{j+1}(x) - P_{j-1}(x)) / (2j+1), and (τ/2)(x+1) for j = 0
    let antiderivative = |j: usize, x: f64| -> f64 {
        if j == 0 {
            half * (x + 1.0)
        } else {
            half * (legendre(j + 1, x).0 - legendre(j - 1, x).0) / (2 * j + 1) as f64
        }
    };
    let values = scheme
        .nodes()
        .iter()
        .map(|&x| {
            if x == -1.0 {
                return vec![start];
            }
            let v = coeffs
                .iter()
                .enumerate()
                .fold(start, |acc, (j, c)| acc + c * antiderivative(j, x));
            vec![v]
        })
        .collect();
    SlabPolynomial { slab, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_rules() {
        let r1 = gauss_rule(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert_abs_diff_eq!(r1.weights[0], 2.0, epsilon = 1e-15);

        let r2 = gauss_rule(2).unwrap();
        assert_abs_diff_eq!(r2.nodes[0], -0.5773502691896258, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.nodes[1], 0.5773502691896258, epsilon = 1e-15);
        for w in &r2.weights {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-14);
        }

        let r3 = gauss_rule(3).unwrap();
        let c = (3.0f64 / 5.0).sqrt();
        assert_abs_diff_eq!(r3.nodes[0], -c, epsilon = 1e-15);
        assert_abs_diff_eq!(r3.nodes[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r3.nodes[2], c, epsilon = 1e-15);
        assert_abs_diff_eq!(r3.weights[0], 5.0 / 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r3.weights[1], 8.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn rule_range_is_checked() {
        assert!(matches!(gauss_rule(0), Err(SolverError::Config { .. })));
        assert!(gauss_rule(9).is_err());
        assert!(gauss_rule(8).is_ok());
    }

    #[test]
    fn nodes_are_legendre_roots() {
        for k in 1..=MAX_STAGES {
            let r = gauss_rule(k).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            for w in r.nodes.windows(2) {
                assert!(w[0] < w[1]);
            }
            for &c in &r.nodes {
                assert!(legendre(k, c).0.abs() < 1e-14, "k={k}");
            }
        }
    }

    #[test]
    fn shifted_legendre_endpoints() {
        let slab = Slab::new(0.3, 0.8).unwrap();
        for k in 0..6 {
            assert_abs_diff_eq!(shifted_legendre(k, 0.8, slab).unwrap(), 1.0, epsilon = 1e-14);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert_abs_diff_eq!(shifted_legendre(k, 0.3, slab).unwrap(), sign, epsilon = 1e-14);
        }
        assert_eq!(shifted_legendre(0, 0.55, slab).unwrap(), 1.0);
        assert!(Slab::new(1.0, 1.0).is_err());
    }

    #[test]
    fn shifted_legendre_orthogonal() {
        let slab = Slab::new(0.0, 0.4).unwrap();
        let q = legendre_gauss(4);
        for j in 0..=3 {
            for m in 0..=3 {
                if j == m {
                    continue;
                }
                let v = q.integrate(slab.t0, slab.t1, |t| {
                    shifted_legendre(j, t, slab).unwrap() * shifted_legendre(m, t, slab).unwrap()
                });
                assert!(v.abs() < 1e-13, "({j},{m}) -> {v}");
            }
        }
    }

    #[test]
    fn k1_scheme_is_midpoint() {
        let s = collocation_scheme(1).unwrap();
        assert_abs_diff_eq!(s.diff_matrix[0][0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.diff_matrix[0][1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.endpoint_weights[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.endpoint_weights[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn scheme_invariants() {
        for k in 1..=MAX_STAGES {
            let s = collocation_scheme(k).unwrap();
            assert!((s.endpoint_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for row in &s.diff_matrix {
                assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
            // exact on t^m, m ≤ k, on a slab of length τ
            let tau = 0.37;
            for m in 0..=k {
                let samples: Vec<f64> = s
                    .nodes()
                    .iter()
                    .map(|&x| (0.5 * tau * (x + 1.0)).powi(m as i32))
                    .collect();
                for (j, row) in s.diff_matrix.iter().enumerate() {
                    let d: f64 = row.iter().zip(&samples).map(|(a, b)| a * b).sum::<f64>() * 2.0 / tau;
                    let t = 0.5 * tau * (s.rule.nodes[j] + 1.0);
                    let exact = if m == 0 { 0.0 } else { m as f64 * t.powi(m as i32 - 1) };
                    assert!((d - exact).abs() < 1e-10, "k={k} m={m}");
                }
                let end: f64 = s.endpoint_weights.iter().zip(&samples).map(|(a, b)| a * b).sum();
                assert!((end - tau.powi(m as i32)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn l2_projection_of_lk_vanishes() {
        let slab = Slab::new(0.0, 0.5).unwrap();
        for k in 1..=5 {
            let s = collocation_scheme(k).unwrap();
            let p = SlabPolynomial::sample(&s, slab, |t| {
                vec![Complex64::new(shifted_legendre(k, t, slab).unwrap(), 0.0)]
            });
            let proj = temporal_l2_project(&p, &s);
            for v in &proj.values {
                assert!(v[0].norm() < 1e-13);
            }
        }
    }

    #[test]
    fn ritz_reproduces_polynomials() {
        let slab = Slab::new(0.2, 0.7).unwrap();
        for k in 1..=4 {
            let s = collocation_scheme(k).unwrap();
            let f = move |t: f64| Complex64::new(1.0 + t.powi(k as i32), -2.0 * t);
            let r = temporal_ritz_project(&f, None, &s, slab);
            for (x, v) in s.nodes().iter().zip(&r.values) {
                let t = slab.from_reference(*x);
                assert!((v[0] - f(t)).norm() < 1e-8, "k={k}");
            }
            let d = move |t: f64| Complex64::new(k as f64 * t.powi(k as i32 - 1), -2.0);
            let r = temporal_ritz_project(&f, Some(&d), &s, slab);
            for (x, v) in s.nodes().iter().zip(&r.values) {
                assert!((v[0] - f(slab.from_reference(*x))).norm() < 1e-12);
            }
            let c = |_t: f64| Complex64::new(3.5, 0.25);
            let r = temporal_ritz_project(&c, None, &s, slab);
            for v in &r.values {
                assert!((v[0] - c(0.0)).norm() < 1e-12);
            }
        }
    }
}
