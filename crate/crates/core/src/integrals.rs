//! Closed-form matrix elements between floating correlated Gaussians.
//!
//! The product of two Gaussians `g_{A,s} g_{B,t}` is again a Gaussian with
//! correlation matrix `C = A + B`, centre `u = C⁻¹(A s + B t)` (per
//! Cartesian component) and prefactor `exp(-γ)`, where
//! `γ = Σ_c (s_c - t_c)ᵀ A C⁻¹ B (s_c - t_c)`. Every element below is a
//! moment of that product:
//!
//! * overlap `S = (πⁿ / det C)^{3/2} e^{-γ}`;
//! * kinetic `T = 2S [ (3/2) tr(AΛBC⁻¹) + Σ_c (u_c - s_c)ᵀ AΛB (u_c - t_c) ]`;
//! * Coulomb `⟨1/|wᵀx|⟩ = 2 √(β/π) F₀(β |wᵀu|²)` with `β = 1/(wᵀC⁻¹w)`;
//! * dipole `⟨Σ_j c_j z_j⟩ = S Σ_j c_j u_{j,z}`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::boys::boys_f0;
use crate::ecg::{BasisSet, FloatingEcg};
use crate::error::{domain, Error, Result};
use crate::system::{CoulombPair, InternalSpec};

/// Shifts as an `n × 3` matrix, one row per internal coordinate.
fn shift_matrix(g: &FloatingEcg) -> DMatrix<f64> {
    let n = g.dim();
    DMatrix::from_fn(n, 3, |j, c| g.shift()[3 * j + c])
}

/// Everything about the product `g·h` that the element formulas need.
#[derive(Clone, Debug)]
pub struct GaussianProduct {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    s: DMatrix<f64>,
    t: DMatrix<f64>,
    c_inv: DMatrix<f64>,
    centre: DMatrix<f64>,
    overlap: f64,
}

impl GaussianProduct {
    pub fn new(g: &FloatingEcg, h: &FloatingEcg) -> Result<Self> {
        Self::from_parts(g.correlation(), shift_matrix(g), h.correlation(), shift_matrix(h))
    }

    fn from_parts(a: DMatrix<f64>, s: DMatrix<f64>, b: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != b.nrows() {
            return Err(domain(format!(
                "dimension mismatch: {} vs {} internal coordinates",
                a.nrows(),
                b.nrows()
            )));
        }
        let n = a.nrows();
        let chol = (&a + &b)
            .cholesky()
            .ok_or_else(|| Error::Construction("A + B is not positive definite".into()))?;
        let det: f64 = chol.l_dirty().diagonal().iter().map(|d| d * d).product();
        let c_inv = chol.inverse();
        let centre = &c_inv * (&a * &s + &b * &t);
        let coupling = &a * &c_inv * &b;
        let d = &s - &t;
        let gamma = (d.transpose() * coupling * &d).trace();
        let overlap = (PI.powi(n as i32) / det).powf(1.5) * (-gamma).exp();
        Ok(GaussianProduct {
            a,
            b,
            s,
            t,
            c_inv,
            centre,
            overlap,
        })
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    /// `⟨g| ½ Σ_jk Λ_jk p_j·p_k |h⟩`.
    pub fn kinetic(&self, lambda: &DMatrix<f64>) -> Result<f64> {
        let n = self.a.nrows();
        if lambda.nrows() != n || lambda.ncols() != n {
            return Err(domain("kinetic matrix size does not match the basis"));
        }
        let m = &self.a * lambda * &self.b;
        let trace_term = 1.5 * (&m * &self.c_inv).trace();
        let shift_term = ((&self.centre - &self.s).transpose() * &m * (&self.centre - &self.t)).trace();
        Ok(2.0 * self.overlap * (trace_term + shift_term))
    }

    /// `⟨g| 1/|Σ_k w_k r'_k| |h⟩` (no charge factor).
    pub fn inverse_distance(&self, w: &DVector<f64>) -> Result<f64> {
        if w.len() != self.a.nrows() {
            return Err(domain("pair weights do not match the basis dimension"));
        }
        let beta = 1.0 / (w.transpose() * &self.c_inv * w)[(0, 0)];
        let r0 = w.transpose() * &self.centre;
        let t = beta * r0.norm_squared();
        Ok(self.overlap * 2.0 * (beta / PI).sqrt() * boys_f0(t))
    }

    /// `⟨g| Σ_j c_j z_j |h⟩`.
    pub fn dipole_z(&self, coeffs: &DVector<f64>) -> Result<f64> {
        if coeffs.len() != self.a.nrows() {
            return Err(domain("dipole coefficients do not match the basis dimension"));
        }
        Ok(self.overlap * coeffs.dot(&self.centre.column(2)))
    }
}

pub fn overlap(g: &FloatingEcg, h: &FloatingEcg) -> Result<f64> {
    Ok(GaussianProduct::new(g, h)?.overlap())
}

pub fn kinetic(g: &FloatingEcg, h: &FloatingEcg, lambda: &DMatrix<f64>) -> Result<f64> {
    GaussianProduct::new(g, h)?.kinetic(lambda)
}

/// Coulomb element of one pair, including the charge product.
pub fn coulomb(g: &FloatingEcg, h: &FloatingEcg, pair: &CoulombPair, spec: &InternalSpec) -> Result<f64> {
    if pair.charge_product == 0.0 {
        return Ok(0.0);
    }
    let w = pair.weights(spec.dim());
    Ok(pair.charge_product * GaussianProduct::new(g, h)?.inverse_distance(&w)?)
}

pub fn dipole_z(g: &FloatingEcg, h: &FloatingEcg, coeffs: &DVector<f64>) -> Result<f64> {
    GaussianProduct::new(g, h)?.dipole_z(coeffs)
}

/// Overlap, kinetic, Coulomb and dipole-z matrices of a basis.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrices {
    pub overlap: DMatrix<f64>,
    pub kinetic: DMatrix<f64>,
    pub coulomb: DMatrix<f64>,
    /// Absent for charged systems, whose dipole depends on the origin.
    pub dipole_z: Option<DMatrix<f64>>,
}

/// Pair weights and dipole coefficients shared by every entry.
struct ElementContext<'a> {
    lambda: &'a DMatrix<f64>,
    pairs: Vec<(f64, DVector<f64>)>,
    dipole: Option<&'a DVector<f64>>,
}

impl<'a> ElementContext<'a> {
    fn new(spec: &'a InternalSpec) -> Self {
        ElementContext {
            lambda: &spec.kinetic,
            pairs: spec
                .pairs
                .iter()
                .filter(|p| p.charge_product != 0.0)
                .map(|p| (p.charge_product, p.weights(spec.dim())))
                .collect(),
            dipole: spec.dipole_coeffs().ok(),
        }
    }
}

impl OperatorMatrices {
    pub fn build(basis: &BasisSet, spec: &InternalSpec) -> Result<Self> {
        let k = basis.len();
        if basis.dim() != spec.dim() {
            return Err(domain(format!(
                "basis has {} internal coordinates, system has {}",
                basis.dim(),
                spec.dim()
            )));
        }
        let ctx = ElementContext::new(spec);
        let mut out = OperatorMatrices {
            overlap: DMatrix::zeros(k, k),
            kinetic: DMatrix::zeros(k, k),
            coulomb: DMatrix::zeros(k, k),
            dipole_z: ctx.dipole.map(|_| DMatrix::zeros(k, k)),
        };
        let members = basis.members();
        for i in 0..k {
            for j in i..k {
                out.fill(&ctx, members, i, j)?;
            }
        }
        Ok(out)
    }

    fn fill(&mut self, ctx: &ElementContext<'_>, members: &[FloatingEcg], i: usize, j: usize) -> Result<()> {
        let prod = GaussianProduct::new(&members[i], &members[j])?;
        let sij = prod.overlap();
        let tij = prod.kinetic(ctx.lambda)?;
        let mut vij = 0.0;
        for (q, w) in &ctx.pairs {
            vij += q * prod.inverse_distance(w)?;
        }
        self.overlap[(i, j)] = sij;
        self.overlap[(j, i)] = sij;
        self.kinetic[(i, j)] = tij;
        self.kinetic[(j, i)] = tij;
        self.coulomb[(i, j)] = vij;
        self.coulomb[(j, i)] = vij;
        if let (Some(m), Some(c)) = (self.dipole_z.as_mut(), ctx.dipole) {
            let mij = prod.dipole_z(c)?;
            m[(i, j)] = mij;
            m[(j, i)] = mij;
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.overlap.nrows()
    }

    /// Recomputes the rows and columns of the listed members after they
    /// changed; every other entry is left as is.
    pub fn update_members(&mut self, members: &[FloatingEcg], changed: &[usize], spec: &InternalSpec) -> Result<()> {
        let ctx = ElementContext::new(spec);
        for &i in changed {
            for j in 0..members.len() {
                self.fill(&ctx, members, i, j)?;
            }
        }
        Ok(())
    }

    /// Field-free Hamiltonian `T + V`.
    pub fn field_free(&self) -> DMatrix<f64> {
        &self.kinetic + &self.coulomb
    }

    pub fn dipole(&self) -> Result<&DMatrix<f64>> {
        self.dipole_z
            .as_ref()
            .ok_or_else(|| domain("dipole origin-dependent: system is not neutral"))
    }

    /// `H(ε) = T + V - ε M_z`.
    pub fn hamiltonian(&self, epsilon: f64) -> Result<DMatrix<f64>> {
        let h = self.field_free();
        if epsilon == 0.0 {
            return Ok(h);
        }
        Ok(h - self.dipole()? * epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecg::parity_partner;
    use crate::system::ParticleSystem;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn iso(a: f64, z: f64) -> FloatingEcg {
        FloatingEcg::isotropic(a, DVector::from_vec(vec![0.0, 0.0, z])).unwrap()
    }

    fn hydrogen() -> InternalSpec {
        InternalSpec::from_system(&ParticleSystem::hydrogen()).unwrap()
    }

    #[test]
    fn unit_overlap() {
        let g = iso(1.0, 0.0);
        assert_relative_eq!(overlap(&g, &g).unwrap(), (PI / 2.0).powf(1.5), max_relative = 1e-15);
        let shifted = iso(1.0, 1.7);
        assert_relative_eq!(
            overlap(&shifted, &shifted).unwrap(),
            (PI / 2.0).powf(1.5),
            max_relative = 1e-15
        );
    }

    #[test]
    fn kinetic_virial_ratio() {
        let a = 0.8;
        let g = iso(a, 0.0);
        let spec = hydrogen();
        let mu_inv = spec.kinetic[(0, 0)];
        let ratio = kinetic(&g, &g, &spec.kinetic).unwrap() / overlap(&g, &g).unwrap();
        assert_relative_eq!(ratio, 1.5 * a * mu_inv, max_relative = 1e-14);

        let scaled = &spec.kinetic * 3.0;
        let h = iso(1.9, 0.4);
        assert_relative_eq!(
            kinetic(&g, &h, &scaled).unwrap(),
            3.0 * kinetic(&g, &h, &spec.kinetic).unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn coulomb_of_centred_gaussian() {
        // ⟨1/r⟩ of exp(-2 r²) normalized is 2 √(2/π)
        let g = iso(1.0, 0.0);
        let spec = hydrogen();
        let ratio = coulomb(&g, &g, &spec.pairs[0], &spec).unwrap() / overlap(&g, &g).unwrap();
        assert_relative_eq!(ratio, -2.0 * (2.0 / PI).sqrt(), max_relative = 1e-15);

        let neutral = CoulombPair {
            charge_product: 0.0,
            ..spec.pairs[0].clone()
        };
        assert_eq!(coulomb(&g, &iso(2.0, 1.0), &neutral, &spec).unwrap(), 0.0);
    }

    #[test]
    fn dipole_cases() {
        let c = DVector::from_vec(vec![-1.0]);
        let g = iso(1.2, 0.0);
        let h = iso(0.5, 0.0);
        assert_eq!(dipole_z(&g, &h, &c).unwrap(), 0.0);

        let z0 = 0.75;
        let d = iso(1.1, z0);
        assert_relative_eq!(
            dipole_z(&d, &d, &c).unwrap(),
            -z0 * overlap(&d, &d).unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = iso(1.0, 0.0);
        let h = FloatingEcg::isotropic(1.0, DVector::zeros(6)).unwrap();
        assert!(matches!(overlap(&g, &h), Err(Error::Domain(_))));
    }

    fn arb_pair(n: usize) -> impl Strategy<Value = (FloatingEcg, FloatingEcg)> {
        let member = move || {
            (
                proptest::collection::vec(0.45f64..2.2, n),
                proptest::collection::vec(-0.3f64..0.3, n * n),
                proptest::collection::vec(-3.0f64..3.0, 3 * n),
            )
                .prop_map(move |(diag, off, s)| {
                    let chol = DMatrix::from_fn(n, n, |i, j| {
                        if i == j {
                            diag[i]
                        } else if i > j {
                            off[i * n + j]
                        } else {
                            0.0
                        }
                    });
                    FloatingEcg::new(chol, DVector::from_vec(s)).unwrap()
                })
        };
        (member(), member())
    }

    proptest! {
        #[test]
        fn elements_are_symmetric((g, h) in (1usize..=3).prop_flat_map(arb_pair)) {
            let n = g.dim();
            let lambda = DMatrix::from_fn(n, n, |i, j| if i == j { 1.5 } else { 0.5 });
            let w = DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else if i == n - 1 { -1.0 } else { 0.0 });
            let c = DVector::from_fn(n, |i, _| 0.3 - i as f64);
            let gh = GaussianProduct::new(&g, &h).unwrap();
            let hg = GaussianProduct::new(&h, &g).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-13 * x.abs().max(y.abs()).max(1e-300);
            prop_assert!(close(gh.overlap(), hg.overlap()));
            prop_assert!(close(gh.kinetic(&lambda).unwrap(), hg.kinetic(&lambda).unwrap()));
            prop_assert!(close(gh.inverse_distance(&w).unwrap(), hg.inverse_distance(&w).unwrap()));
            prop_assert!(close(gh.dipole_z(&c).unwrap(), hg.dipole_z(&c).unwrap()));

            let inv = GaussianProduct::new(&parity_partner(&g), &parity_partner(&h)).unwrap();
            prop_assert!((inv.dipole_z(&c).unwrap() + gh.dipole_z(&c).unwrap()).abs()
                <= 1e-12 * gh.overlap().max(1e-300));
            prop_assert!(gh.overlap() > 0.0);
        }
    }

    #[test]
    fn assembled_overlap_has_positive_diagonal() {
        let spec = hydrogen();
        let basis = BasisSet::new((0..5).map(|k| iso(0.2 + k as f64, 0.3 * k as f64)).collect()).unwrap();
        let m = OperatorMatrices::build(&basis, &spec).unwrap();
        assert!(m.overlap.diagonal().iter().all(|d| *d > 0.0));
        assert!(m.kinetic.diagonal().iter().all(|d| *d > 0.0));
        assert_eq!(m.overlap, m.overlap.transpose());
        let h0 = m.hamiltonian(0.0).unwrap();
        let hp = m.hamiltonian(0.01).unwrap();
        let hm = m.hamiltonian(-0.01).unwrap();
        assert_relative_eq!((&hp + &hm) * 0.5, h0, epsilon = 1e-15);
    }
}
