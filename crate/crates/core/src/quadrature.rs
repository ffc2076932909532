//! Numerical integration oracle for the matrix elements.
//!
//! Integrands are evaluated pointwise from the Gaussian definitions, never
//! from the closed forms in [`crate::integrals`]. The quadrature only uses
//! the product Gaussian to decide *where* to put nodes, so an error in the
//! closed-form algebra shows up as a mismatch rather than being reproduced.
//!
//! * Overlap, kinetic (Laplacian form) and dipole use tensor Gauss–Hermite
//!   cubature in whitened coordinates.
//! * Coulomb integrates the pair vector `r` in spherical coordinates centred
//!   on the singularity (the `r²` Jacobian cancels `1/r`), with adaptive
//!   Gauss–Kronrod in the radius and polar angle, and Gauss–Hermite over the
//!   remaining coordinate.
//!
//! Limited to at most two internal coordinates (three particles).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::ecg::FloatingEcg;
use crate::error::{domain, Error, Result};
use crate::system::{CoulombPair, InternalSpec, PairKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegrandKind {
    Overlap,
    Kinetic,
    Coulomb,
    Dipole,
}

/// Relative tolerance requested from the adaptive rules.
const ADAPTIVE_REL_TOL: f64 = 1e-13;
const HERMITE_ORDER: usize = 6;
/// Gauss–Hermite order over the spectator coordinate of a Coulomb pair.
const SPECTATOR_ORDER: usize = 3;
const AZIMUTH_POINTS: usize = 6;

/// Numerically integrates `⟨g| O |h⟩` for the requested operator.
///
/// The Coulomb kind sums every pair of `spec` with its charge product, the
/// kinetic kind uses `spec.kinetic` and the dipole kind the system's dipole
/// coefficients.
pub fn quadrature_oracle(
    kind: IntegrandKind,
    g: &FloatingEcg,
    h: &FloatingEcg,
    spec: &InternalSpec,
) -> Result<f64> {
    let n = g.dim();
    if n != h.dim() || n != spec.dim() {
        return Err(domain("dimension mismatch between Gaussians and system"));
    }
    if n > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature oracle handles at most 2 internal coordinates, got {n}"
        )));
    }
    match kind {
        IntegrandKind::Overlap => Ok(hermite_cubature(g, h, |_, _| 1.0)),
        IntegrandKind::Dipole => {
            let c = spec.dipole_coeffs()?.clone();
            Ok(hermite_cubature(g, h, |x, _| {
                (0..n).map(|j| c[j] * x[3 * j + 2]).sum()
            }))
        }
        IntegrandKind::Kinetic => {
            let lambda = spec.kinetic.clone();
            let b = h.correlation();
            let t = h.shift().clone();
            Ok(hermite_cubature(g, h, |x, _| {
                laplacian_factor(x, &b, &t, &lambda)
            }))
        }
        IntegrandKind::Coulomb => {
            let mut total = 0.0;
            for pair in &spec.pairs {
                if pair.charge_product != 0.0 {
                    total += pair.charge_product * coulomb_pair_oracle(g, h, pair)?;
                }
            }
            Ok(total)
        }
    }
}

/// `(-½ Σ_jk Λ_jk ∇_j·∇_k h) / h` at `x`, from the second derivatives of
/// `exp(-(x-t)ᵀB(x-t))`.
fn laplacian_factor(x: &[f64], b: &DMatrix<f64>, t: &DVector<f64>, lambda: &DMatrix<f64>) -> f64 {
    let n = b.nrows();
    let mut v = vec![[0.0; 3]; n];
    for (j, vj) in v.iter_mut().enumerate() {
        for (c, vjc) in vj.iter_mut().enumerate() {
            *vjc = (0..n).map(|l| b[(j, l)] * (x[3 * l + c] - t[3 * l + c])).sum();
        }
    }
    let mut total = 0.0;
    for j in 0..n {
        for k in 0..n {
            let mut second = 0.0;
            for c in 0..3 {
                second += 4.0 * v[j][c] * v[k][c] - 2.0 * b[(j, k)];
            }
            total += lambda[(j, k)] * second;
        }
    }
    -0.5 * total
}

/// Gauss–Hermite nodes and weights for the weight `exp(-x²)` (Golub–Welsch).
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    if order == 1 {
        return (vec![0.0], vec![PI.sqrt()]);
    }
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Centre `u` (flat, like a shift) and correlation `C` of the product `g·h`,
/// used only for node placement.
fn product_frame(g: &FloatingEcg, h: &FloatingEcg) -> (DMatrix<f64>, DVector<f64>) {
    let n = g.dim();
    let a = g.correlation();
    let b = h.correlation();
    let c = &a + &b;
    let c_inv = c.clone().try_inverse().expect("positive definite");
    let mut u = DVector::zeros(3 * n);
    for comp in 0..3 {
        let rhs = DVector::from_fn(n, |j, _| {
            (0..n)
                .map(|l| a[(j, l)] * g.shift()[3 * l + comp] + b[(j, l)] * h.shift()[3 * l + comp])
                .sum()
        });
        let uc = &c_inv * rhs;
        for j in 0..n {
            u[3 * j + comp] = uc[j];
        }
    }
    (c, u)
}

/// `∫ g(x) h(x) f(x) dx` by tensor Gauss–Hermite in whitened coordinates.
///
/// `f` receives the point (flat layout) and the whitened coordinates.
fn hermite_cubature<F: Fn(&[f64], &[f64]) -> f64>(g: &FloatingEcg, h: &FloatingEcg, f: F) -> f64 {
    let n = g.dim();
    let (c, u) = product_frame(g, h);
    let chol = c.cholesky().expect("positive definite");
    // x_c = u_c + R⁻ᵀ y_c with C = R Rᵀ
    let l_inv_t = chol
        .l()
        .try_inverse()
        .expect("triangular factor is invertible")
        .transpose();
    let det_c: f64 = chol.l_dirty().diagonal().iter().map(|d| d * d).product();
    let (nodes, weights) = gauss_hermite(HERMITE_ORDER);
    let dims = 3 * n;
    let total_nodes = HERMITE_ORDER.pow(dims as u32);

    let mut sum = 0.0;
    let mut idx = vec![0usize; dims];
    let mut y = vec![0.0; dims];
    let mut x = vec![0.0; dims];
    for _ in 0..total_nodes {
        let mut w = 1.0;
        let mut y2 = 0.0;
        for d in 0..dims {
            y[d] = nodes[idx[d]];
            w *= weights[idx[d]];
            y2 += y[d] * y[d];
        }
        for comp in 0..3 {
            for j in 0..n {
                let mut v = u[3 * j + comp];
                for l in 0..n {
                    v += l_inv_t[(j, l)] * y[3 * l + comp];
                }
                x[3 * j + comp] = v;
            }
        }
        let log_integrand = -(g.exponent_at(&x) + h.exponent_at(&x));
        sum += w * (log_integrand + y2).exp() * f(&x, &y);

        for d in (0..dims).rev() {
            idx[d] += 1;
            if idx[d] < HERMITE_ORDER {
                break;
            }
            idx[d] = 0;
        }
    }
    sum / det_c.powf(1.5)
}

// Gauss–Kronrod 7/15 rule on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let centre = f(mid);
    let mut kronrod = GK_WEIGHTS[7] * centre;
    let mut gauss = GAUSS7_WEIGHTS[3] * centre;
    for i in 0..7 {
        let dx = half * GK_NODES[i];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS7_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Globally adaptive Gauss–Kronrod on `[lo, hi]` split initially into
/// `panels` equal pieces.
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize, rel_tol: f64) -> f64 {
    let mut work: Vec<(f64, f64, f64, f64)> = (0..panels)
        .map(|i| {
            let a = lo + (hi - lo) * i as f64 / panels as f64;
            let b = lo + (hi - lo) * (i + 1) as f64 / panels as f64;
            let (v, e) = gk15(&f, a, b);
            (a, b, v, e)
        })
        .collect();
    for _ in 0..2000 {
        let total: f64 = work.iter().map(|w| w.2).sum();
        let err: f64 = work.iter().map(|w| w.3).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 {
            break;
        }
        let (worst, _) = work
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (a, b, _, _) = work.swap_remove(worst);
        let m = 0.5 * (a + b);
        let (v1, e1) = gk15(&f, a, m);
        let (v2, e2) = gk15(&f, m, b);
        work.push((a, m, v1, e1));
        work.push((m, b, v2, e2));
    }
    work.iter().map(|w| w.2).sum()
}

/// `∫ g h / |wᵀx| dx` for one pair, without the charge product.
pub fn coulomb_pair_oracle(g: &FloatingEcg, h: &FloatingEcg, pair: &CoulombPair) -> Result<f64> {
    let n = g.dim();
    // x = M z with z = (r, spectator); |det M| = 1
    let m = match (n, pair.kind) {
        (1, PairKind::Single(0)) => DMatrix::from_element(1, 1, 1.0),
        (2, PairKind::Single(0)) => DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        (2, PairKind::Single(1)) => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        (2, PairKind::Difference(0, 1)) => DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        _ => return Err(domain(format!("pair {:?} does not fit {n} coordinates", pair.kind))),
    };
    let (c, u) = product_frame(g, h);
    let w = pair.weights(n);
    let c_inv = c.clone().try_inverse().expect("positive definite");
    let beta = 1.0 / (w.transpose() * &c_inv * &w)[(0, 0)];
    let r0 = [0usize, 1, 2].map(|comp| (0..n).map(|j| w[j] * u[3 * j + comp]).sum::<f64>());
    let r0_norm = (r0[0] * r0[0] + r0[1] * r0[1] + r0[2] * r0[2]).sqrt();

    // polar axis along r0
    let e3 = if r0_norm > 1e-12 {
        r0.map(|v| v / r0_norm)
    } else {
        [0.0, 0.0, 1.0]
    };
    let trial = if e3[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = trial[0] * e3[0] + trial[1] * e3[1] + trial[2] * e3[2];
    let mut e1 = [trial[0] - dot * e3[0], trial[1] - dot * e3[1], trial[2] - dot * e3[2]];
    let e1n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1 = e1.map(|v| v / e1n);
    let e2 = [
        e3[1] * e1[2] - e3[2] * e1[1],
        e3[2] * e1[0] - e3[0] * e1[2],
        e3[0] * e1[1] - e3[1] * e1[0],
    ];

    // spectator: conditional Gaussian given r
    let cz = m.transpose() * &c * &m;
    let spectator = if n == 2 {
        let a = g.correlation();
        let b = h.correlation();
        let prec = cz[(1, 1)];
        let mut lin = [0.0; 3];
        for (comp, l) in lin.iter_mut().enumerate() {
            let rhs = DVector::from_fn(n, |j, _| {
                (0..n)
                    .map(|k| a[(j, k)] * g.shift()[3 * k + comp] + b[(j, k)] * h.shift()[3 * k + comp])
                    .sum()
            });
            *l = (m.transpose() * rhs)[1];
        }
        Some((prec, lin, cz[(0, 1)]))
    } else {
        None
    };
    let (gh_nodes, gh_weights) = gauss_hermite(SPECTATOR_ORDER);

    let point_value = |r: [f64; 3]| -> f64 {
        let mut x = vec![0.0; 3 * n];
        match spectator {
            None => {
                x.copy_from_slice(&r);
                (-(g.exponent_at(&x) + h.exponent_at(&x))).exp()
            }
            Some((prec, lin, cross)) => {
                let scale = 1.0 / prec.sqrt();
                let centre = [0, 1, 2].map(|comp| (lin[comp] - cross * r[comp]) / prec);
                let mut acc = 0.0;
                for (ia, &na) in gh_nodes.iter().enumerate() {
                    for (ib, &nb) in gh_nodes.iter().enumerate() {
                        for (ic, &nc) in gh_nodes.iter().enumerate() {
                            let eta = [na, nb, nc];
                            let y = [0, 1, 2].map(|comp| centre[comp] + scale * eta[comp]);
                            for comp in 0..3 {
                                x[comp] = m[(0, 0)] * r[comp] + m[(0, 1)] * y[comp];
                                x[3 + comp] = m[(1, 0)] * r[comp] + m[(1, 1)] * y[comp];
                            }
                            let eta2 = na * na + nb * nb + nc * nc;
                            let wgt = gh_weights[ia] * gh_weights[ib] * gh_weights[ic];
                            acc += wgt * (eta2 - g.exponent_at(&x) - h.exponent_at(&x)).exp();
                        }
                    }
                }
                acc * scale.powi(3)
            }
        }
    };

    let angular = |rho: f64| -> f64 {
        let polar = |mu: f64| -> f64 {
            let sin = (1.0 - mu * mu).max(0.0).sqrt();
            let mut acc = 0.0;
            for k in 0..AZIMUTH_POINTS {
                let phi = 2.0 * PI * k as f64 / AZIMUTH_POINTS as f64;
                let (sp, cp) = phi.sin_cos();
                let r = [0, 1, 2].map(|comp| {
                    rho * (sin * cp * e1[comp] + sin * sp * e2[comp] + mu * e3[comp])
                });
                acc += point_value(r);
            }
            acc * 2.0 * PI / AZIMUTH_POINTS as f64
        };
        // the angular profile peaks towards mu = 1 when beta·rho·|r0| is large
        let kappa = 2.0 * beta * rho * r0_norm;
        let panels = 2 + (kappa.sqrt() as usize).min(40);
        adaptive_gk(polar, -1.0, 1.0, panels, ADAPTIVE_REL_TOL)
    };

    let width = 1.0 / beta.sqrt();
    let upper = r0_norm + 10.0 * width;
    let panels = 4 + (upper / width).ceil() as usize;
    Ok(adaptive_gk(|rho| rho * angular(rho), 0.0, upper, panels, ADAPTIVE_REL_TOL))
}
