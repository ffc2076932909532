//! Field-dressed Hamiltonian, lowest-state solver and nonlinear optimizer.

mod optimize;

pub use optimize::{optimize_nonlinear, OptimizeOptions, Optimized};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ecg::BasisSet;
use crate::error::{domain, Error, Result};
use crate::integrals::OperatorMatrices;
use crate::system::InternalSpec;

/// Overlap eigenvalues below this fraction of the largest are discarded.
pub const DEFAULT_LIN_DEP_TOL: f64 = 1e-12;

/// Relative window inside which two lowest eigenvalues count as degenerate.
const DEGENERACY_WINDOW: f64 = 1e-10;

/// `H(ε) = T + V - ε M_z` in a fixed basis.
#[derive(Clone, Debug)]
pub struct FieldHamiltonian {
    pub epsilon: f64,
    pub matrices: OperatorMatrices,
    pub h: DMatrix<f64>,
}

impl FieldHamiltonian {
    pub fn new(matrices: OperatorMatrices, epsilon: f64) -> Result<Self> {
        let h = matrices.hamiltonian(epsilon)?;
        Ok(FieldHamiltonian { epsilon, matrices, h })
    }

    pub fn build(basis: &BasisSet, spec: &InternalSpec, epsilon: f64) -> Result<Self> {
        Self::new(OperatorMatrices::build(basis, spec)?, epsilon)
    }

    pub fn solve(&self, lin_dep_tol: f64) -> Result<VariationalState> {
        solve_lowest(&self.h, &self.matrices.overlap, lin_dep_tol)
    }
}

/// Lowest variational state in a given basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub energy: f64,
    /// Linear coefficients, normalized so that `cᵀSc = 1`.
    pub coefficients: Vec<f64>,
    /// Number of overlap eigendirections kept after filtering.
    pub retained_rank: usize,
    /// Largest finite-difference derivative of the energy with respect to
    /// the nonlinear parameters, when it was measured.
    pub stationarity_norm: Option<f64>,
}

impl VariationalState {
    pub fn coefficient_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }
}

/// Lowest eigenpair of `H c = E S c` restricted to the subspace where the
/// overlap eigenvalues exceed `lin_dep_tol` times the largest.
///
/// Among (numerically) degenerate lowest eigenvectors the one with the
/// largest first coefficient wins, and the sign is fixed by `c₁ > 0`.
pub fn solve_lowest(h: &DMatrix<f64>, s: &DMatrix<f64>, lin_dep_tol: f64) -> Result<VariationalState> {
    let k = s.nrows();
    if k == 0 || s.ncols() != k || h.nrows() != k || h.ncols() != k {
        return Err(domain("Hamiltonian and overlap must be square and of equal size"));
    }
    let s_eig = SymmetricEigen::new(s.clone());
    let largest = s_eig.eigenvalues.max();
    if !(largest > 0.0) || !largest.is_finite() {
        return Err(Error::DegenerateBasis("overlap matrix is numerically zero".into()));
    }
    let cutoff = lin_dep_tol * largest;
    let kept: Vec<usize> = (0..k).filter(|&i| s_eig.eigenvalues[i] > cutoff).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateBasis("no overlap eigenvalue above the cutoff".into()));
    }
    let x = DMatrix::from_fn(k, kept.len(), |r, c| {
        let i = kept[c];
        s_eig.eigenvectors[(r, i)] / s_eig.eigenvalues[i].sqrt()
    });
    let reduced = x.transpose() * h * &x;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let h_eig = SymmetricEigen::new(reduced);
    let lowest = h_eig.eigenvalues.min();
    if !lowest.is_finite() {
        return Err(Error::DegenerateBasis("non-finite eigenvalue".into()));
    }
    let window = DEGENERACY_WINDOW * lowest.abs().max(1.0);
    let mut best: Option<DVector<f64>> = None;
    for i in 0..h_eig.eigenvalues.len() {
        if h_eig.eigenvalues[i] - lowest > window {
            continue;
        }
        let c = &x * h_eig.eigenvectors.column(i);
        let better = match &best {
            None => true,
            Some(b) => c[0].abs() > b[0].abs(),
        };
        if better {
            best = Some(c);
        }
    }
    let mut c = best.expect("at least one eigenvalue equals the minimum");
    let lead = c.iter().find(|v| **v != 0.0).copied().unwrap_or(1.0);
    if lead < 0.0 {
        c = -c;
    }
    let norm = (c.transpose() * s * &c)[(0, 0)];
    c /= norm.sqrt();
    let energy = (c.transpose() * h * &c)[(0, 0)];
    Ok(VariationalState {
        energy,
        coefficients: c.iter().copied().collect(),
        retained_rank: kept.len(),
        stationarity_norm: None,
    })
}

/// `⟨A⟩ = cᵀ A c / cᵀ S c`.
pub fn expectation(op: &DMatrix<f64>, state: &VariationalState, s: &DMatrix<f64>) -> Result<f64> {
    let k = state.coefficients.len();
    if op.nrows() != k || op.ncols() != k || s.nrows() != k || s.ncols() != k {
        return Err(domain("operator size does not match the state"));
    }
    let c = state.coefficient_vector();
    Ok((c.transpose() * op * &c)[(0, 0)] / (c.transpose() * s * &c)[(0, 0)])
}

/// Solves the lowest state of a fixed basis at field `epsilon`.
pub fn solve_basis(
    basis: &BasisSet,
    spec: &InternalSpec,
    epsilon: f64,
    lin_dep_tol: f64,
) -> Result<(VariationalState, OperatorMatrices)> {
    let fh = FieldHamiltonian::build(basis, spec, epsilon)?;
    let state = fh.solve(lin_dep_tol)?;
    Ok((state, fh.matrices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecg::{parity_close, seed_basis, FloatingEcg, Placement};
    use crate::system::ParticleSystem;
    use approx::assert_relative_eq;

    fn hydrogen() -> InternalSpec {
        InternalSpec::from_system(&ParticleSystem::hydrogen()).unwrap()
    }

    /// Even-tempered exponents 0.03 · 3^k.
    fn even_tempered(count: usize) -> BasisSet {
        BasisSet::new(
            (0..count)
                .map(|k| FloatingEcg::isotropic(0.03 * 3f64.powi(k as i32), DVector::zeros(3)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_function_is_rayleigh_quotient() {
        let h = DMatrix::from_element(1, 1, -0.3);
        let s = DMatrix::from_element(1, 1, 2.0);
        let st = solve_lowest(&h, &s, DEFAULT_LIN_DEP_TOL).unwrap();
        assert_relative_eq!(st.energy, -0.15, epsilon = 1e-15);
        assert_relative_eq!(st.coefficients[0], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn hydrogen_even_tempered_energy() {
        let spec = hydrogen();
        let exact = -0.5 * (1.0 / spec.kinetic[(0, 0)]);
        assert_relative_eq!(exact, -0.499_727_840, epsilon = 5e-10);
        let (st, m) = solve_basis(&even_tempered(8), &spec, 0.0, DEFAULT_LIN_DEP_TOL).unwrap();
        assert!((st.energy - exact).abs() < 5e-4, "{}", st.energy);
        assert!(st.energy > exact);
        let c = st.coefficient_vector();
        assert_relative_eq!((c.transpose() * &m.overlap * &c)[(0, 0)], 1.0, epsilon = 1e-12);
        let h = m.field_free();
        assert_relative_eq!(expectation(&h, &st, &m.overlap).unwrap(), st.energy, epsilon = 1e-12);
        assert_relative_eq!(expectation(&m.overlap, &st, &m.overlap).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn adding_a_function_never_raises_the_energy() {
        let spec = hydrogen();
        let eight = solve_basis(&even_tempered(8), &spec, 0.0, DEFAULT_LIN_DEP_TOL).unwrap().0;
        let mut members = even_tempered(8).into_members();
        members.push(FloatingEcg::isotropic(0.4, DVector::from_vec(vec![0.0, 0.0, 0.3])).unwrap());
        let nine = solve_basis(&BasisSet::new(members).unwrap(), &spec, 0.0, DEFAULT_LIN_DEP_TOL)
            .unwrap()
            .0;
        assert!(nine.energy <= eight.energy + 1e-13);
    }

    #[test]
    fn zero_overlap_is_degenerate() {
        let z = DMatrix::zeros(2, 2);
        assert!(matches!(
            solve_lowest(&z, &z, DEFAULT_LIN_DEP_TOL),
            Err(Error::DegenerateBasis(_))
        ));
    }

    #[test]
    fn duplicate_functions_are_filtered() {
        let spec = hydrogen();
        let mut members = even_tempered(4).into_members();
        members.push(members[1].clone());
        let basis = BasisSet::new(members).unwrap();
        let (st, _) = solve_basis(&basis, &spec, 0.0, DEFAULT_LIN_DEP_TOL).unwrap();
        assert_eq!(st.retained_rank, 4);
        let (ref_st, _) = solve_basis(&even_tempered(4), &spec, 0.0, DEFAULT_LIN_DEP_TOL).unwrap();
        assert_relative_eq!(st.energy, ref_st.energy, epsilon = 1e-12);
    }

    #[test]
    fn parity_closed_dipole_vanishes_and_spectrum_is_even() {
        let spec = hydrogen();
        let seed = seed_basis(&spec, 5, Placement::Random { seed: 3, scale: 1.0 }).unwrap();
        let basis = parity_close(&seed);
        let (st, m) = solve_basis(&basis, &spec, 0.0, DEFAULT_LIN_DEP_TOL).unwrap();
        let mz = expectation(m.dipole().unwrap(), &st, &m.overlap).unwrap();
        assert!(mz.abs() < 1e-10, "{mz}");
        for eps in [0.0005, 0.001, 0.002, 0.05] {
            let plus = FieldHamiltonian::new(m.clone(), eps).unwrap().solve(DEFAULT_LIN_DEP_TOL).unwrap();
            let minus = FieldHamiltonian::new(m.clone(), -eps).unwrap().solve(DEFAULT_LIN_DEP_TOL).unwrap();
            assert!((plus.energy - minus.energy).abs() <= 1e-12 * plus.energy.abs());
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let spec = hydrogen();
        let basis = seed_basis(&spec, 6, Placement::Random { seed: 11, scale: 2.0 }).unwrap();
        let a = solve_basis(&basis, &spec, 0.003, DEFAULT_LIN_DEP_TOL).unwrap().0;
        let b = solve_basis(&basis, &spec, 0.003, DEFAULT_LIN_DEP_TOL).unwrap().0;
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
        assert!(a.coefficients[0] > 0.0);
    }
}
