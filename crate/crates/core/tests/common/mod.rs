#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sav_nls::fem1d::{build_space, BoundaryCondition, FemVector, SparseOperator};
use sav_nls::sav_model::{r_init, Nonlinearity, SavState};
use sav_nls::slab_stepper::{assemble_newton_system, residual, Discretization, SlabUnknowns};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn soliton(x: f64, t: f64) -> Complex64 {
    Complex64::new(0.0, 2.0 * x + 3.0 * t).exp() / (x + 4.0 * t).cosh()
}

pub fn soliton_grad(x: f64, t: f64) -> Complex64 {
    let s = x + 4.0 * t;
    soliton(x, t) * c(-s.tanh(), 2.0)
}

pub fn soliton_disc(m: usize, p: usize, k: usize) -> Discretization {
    let space = build_space(-20.0, 20.0, m, p, BoundaryCondition::Periodic).unwrap();
    Discretization::new(space, k, Nonlinearity::power(2.0, 3.0, 1.0).unwrap()).unwrap()
}

fn dense(op: &SparseOperator) -> DMatrix<f64> {
    let d = op.to_dense();
    let n = d.len();
    DMatrix::from_fn(n, n, |i, j| d[i][j])
}

/// `exp(iτ M⁻¹A) u0` through the symmetric eigenproblem
/// `M^{-1/2} A M^{-1/2} = Q Λ Qᵀ`.
pub fn linear_propagator(mass: &SparseOperator, stiff: &SparseOperator, u0: &[Complex64], tau: f64) -> Vec<Complex64> {
    let m = dense(mass);
    let a = dense(stiff);
    let me = m.symmetric_eigen();
    let sqrt = &me.eigenvectors
        * DMatrix::from_diagonal(&me.eigenvalues.map(f64::sqrt))
        * me.eigenvectors.transpose();
    let inv_sqrt = &me.eigenvectors
        * DMatrix::from_diagonal(&me.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * me.eigenvectors.transpose();
    let s = &inv_sqrt * &a * &inv_sqrt;
    let se = s.symmetric_eigen();
    let q = se.eigenvectors.map(|v| c(v, 0.0));
    let phase = DMatrix::from_diagonal(&se.eigenvalues.map(|l| Complex64::new(0.0, tau * l).exp()));
    let sqrt_c = sqrt.map(|v| c(v, 0.0));
    let inv_sqrt_c = inv_sqrt.map(|v| c(v, 0.0));
    let x = DVector::from_column_slice(u0);
    let y = inv_sqrt_c * &q * phase * q.transpose() * sqrt_c * x;
    y.iter().copied().collect()
}

/// Butcher matrix and nodes of the k-stage Gauss method, closed forms.
pub fn gauss_tableau(k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    match k {
        1 => (vec![vec![0.5]], vec![0.5]),
        2 => {
            let s = 3f64.sqrt() / 6.0;
            (vec![vec![0.25, 0.25 - s], vec![0.25 + s, 0.25]], vec![0.5 - s, 0.5 + s])
        }
        3 => {
            let r = 15f64.sqrt();
            (
                vec![
                    vec![5.0 / 36.0, 2.0 / 9.0 - r / 15.0, 5.0 / 36.0 - r / 30.0],
                    vec![5.0 / 36.0 + r / 24.0, 2.0 / 9.0, 5.0 / 36.0 - r / 24.0],
                    vec![5.0 / 36.0 + r / 30.0, 2.0 / 9.0 + r / 15.0, 5.0 / 36.0],
                ],
                vec![0.5 - r / 10.0, 0.5, 0.5 + r / 10.0],
            )
        }
        _ => panic!("no closed form for k = {k}"),
    }
}

/// Stage values of the Gauss IRK for `M y' = i A y`, by a dense solve.
pub fn gauss_irk_stages(
    mass: &SparseOperator,
    stiff: &SparseOperator,
    y0: &[Complex64],
    tau: f64,
    k: usize,
) -> Vec<Vec<Complex64>> {
    let (a_rk, _) = gauss_tableau(k);
    let n = y0.len();
    let l = dense(mass).try_inverse().unwrap() * dense(stiff);
    let l = l.map(|v| c(0.0, v));
    let big = n * k;
    let mut sys = DMatrix::<Complex64>::identity(big, big);
    for i in 0..k {
        for j in 0..k {
            for r in 0..n {
                for s in 0..n {
                    sys[(i * n + r, j * n + s)] -= l[(r, s)] * (tau * a_rk[i][j]);
                }
            }
        }
    }
    let rhs = DVector::from_fn(big, |idx, _| y0[idx % n]);
    let y = sys.lu().solve(&rhs).unwrap();
    (0..k).map(|i| (0..n).map(|r| y[i * n + r]).collect()).collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> FemVector {
    FemVector(
        (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale)
            .collect(),
    )
}

/// A random state and nearby slab iterate.
pub fn random_slab_point(disc: &Discretization, rng: &mut ChaCha8Rng) -> (SavState, SlabUnknowns) {
    let n = disc.num_dofs();
    let k = disc.stages();
    let u = random_vector(rng, n, 1.0);
    let r = r_init(&disc.space, &u, &disc.nl).unwrap();
    let stages = (0..k)
        .map(|_| {
            let d = random_vector(rng, n, 0.1);
            FemVector(u.0.iter().zip(&d.0).map(|(a, b)| a + b).collect())
        })
        .collect();
    let rs = (0..k).map(|_| r + rng.gen_range(-0.1..0.1)).collect();
    (SavState { u, r, t: 0.0 }, SlabUnknowns { stages, r: rs })
}

fn shifted(unknowns: &SlabUnknowns, du: &[FemVector], dr: &[f64], eps: f64) -> SlabUnknowns {
    SlabUnknowns {
        stages: unknowns
            .stages
            .iter()
            .zip(du)
            .map(|(u, d)| FemVector(u.0.iter().zip(&d.0).map(|(a, b)| a + b * eps).collect()))
            .collect(),
        r: unknowns.r.iter().zip(dr).map(|(a, b)| a + b * eps).collect(),
    }
}

/// Largest relative mismatch between central differences of the residual
/// and the assembled Jacobian over `directions` random directions. With
/// `orthogonal`, stage perturbations are projected off the direction that
/// moves the global SAV integral, which the frozen Jacobian omits.
pub fn jacobian_mismatch(
    disc: &Discretization,
    tau: f64,
    state: &SavState,
    unknowns: &SlabUnknowns,
    rng: &mut ChaCha8Rng,
    directions: usize,
    full: bool,
    orthogonal: bool,
) -> f64 {
    let k = disc.stages();
    let n = disc.num_dofs();
    let ns = assemble_newton_system(disc, tau, state, unknowns, full).unwrap();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut du: Vec<FemVector> = (0..k).map(|_| random_vector(rng, n, 1.0)).collect();
        let dr: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if orthogonal {
            // border column j holds −N(U_j)
            for (j, d) in du.iter_mut().enumerate() {
                let load = ns.unpack(&ns.system.border_cols[j]);
                let nj = &load[j].0;
                let dot: f64 = nj.iter().zip(&d.0).map(|(a, b)| (a.conj() * b).re).sum();
                let nn: f64 = nj.iter().map(|a| a.norm_sqr()).sum();
                if nn > 0.0 {
                    for (x, a) in d.0.iter_mut().zip(nj) {
                        *x -= a * (dot / nn);
                    }
                }
            }
        }
        let plus = residual(disc, tau, state, &shifted(unknowns, &du, &dr, eps)).unwrap();
        let minus = residual(disc, tau, state, &shifted(unknowns, &du, &dr, -eps)).unwrap();
        let (p_main, p_border) = ns.pack_residual(&plus);
        let (m_main, m_border) = ns.pack_residual(&minus);
        let fd: Vec<f64> = p_main
            .iter()
            .zip(&m_main)
            .chain(p_border.iter().zip(&m_border))
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();

        let x = ns.pack(&du);
        let mut xb = dr.clone();
        if full {
            // auxiliary unknowns follow from their defining rows
            for j in 0..k {
                let row = &ns.system.border_rows[k + j];
                xb.push(-row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let (top, bottom) = ns.system.apply(&x, &xb);
        let jd: Vec<f64> = top.into_iter().chain(bottom.into_iter().take(k)).collect();
        let diff = fd.iter().zip(&jd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = jd.iter().map(|v| v.abs()).fold(0.0, f64::max);
        worst = worst.max(diff / scale);
    }
    worst
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `ln(e_{i-1}/e_i) / ln(p_{i-1}/p_i)` for consecutive pairs.
pub fn pairwise_orders(errors: &[f64], params: &[f64]) -> Vec<f64> {
    errors
        .windows(2)
        .zip(params.windows(2))
        .map(|(e, p)| (e[0] / e[1]).ln() / (p[0] / p[1]).ln())
        .collect()
}
