//! Particle systems and the separation of centre-of-mass motion.
//!
//! Every system is described in Hartree atomic units. Particles are sorted
//! heaviest-first on construction so that the first particle can serve as
//! the origin of the internal frame: internal coordinate `j` is the position
//! of particle `j + 1` relative to particle 0.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub const ELECTRON_MASS: f64 = 1.0;
pub const PROTON_MASS: f64 = 1836.15267343;
/// Stand-in for an infinitely heavy nucleus.
pub const FIXED_NUCLEUS_MASS: f64 = 1.0e12;

/// Threshold on the CM/internal kinetic cross term above which the
/// transformation is rejected.
const CROSS_COUPLING_LIMIT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub label: String,
    pub mass: f64,
    pub charge: f64,
}

impl Particle {
    pub fn new(label: impl Into<String>, mass: f64, charge: f64) -> Self {
        Particle {
            label: label.into(),
            mass,
            charge,
        }
    }
}

/// A set of point particles, stored heaviest-first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticleSystem {
    particles: Vec<Particle>,
}

impl ParticleSystem {
    pub fn new(mut particles: Vec<Particle>) -> Result<Self> {
        if particles.len() < 2 {
            return Err(domain(format!(
                "a system needs at least two particles, got {}",
                particles.len()
            )));
        }
        for p in &particles {
            if !(p.mass.is_finite() && p.mass > 0.0) {
                return Err(domain(format!(
                    "particle '{}' has non-positive mass {}",
                    p.label, p.mass
                )));
            }
            if !p.charge.is_finite() {
                return Err(domain(format!(
                    "particle '{}' has non-finite charge",
                    p.label
                )));
            }
        }
        // stable: equal masses keep their input order
        particles.sort_by(|a, b| b.mass.total_cmp(&a.mass));
        Ok(ParticleSystem { particles })
    }

    /// Proton + electron with the finite proton mass.
    pub fn hydrogen() -> Self {
        Self::new(vec![
            Particle::new("p", PROTON_MASS, 1.0),
            Particle::new("e", ELECTRON_MASS, -1.0),
        ])
        .expect("valid preset")
    }

    /// Hydrogen with an effectively infinite nuclear mass.
    pub fn fixed_nucleus_hydrogen() -> Self {
        Self::new(vec![
            Particle::new("N", FIXED_NUCLEUS_MASS, 1.0),
            Particle::new("e", ELECTRON_MASS, -1.0),
        ])
        .expect("valid preset")
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Number of internal (relative) coordinates, `N - 1`.
    pub fn internal_dim(&self) -> usize {
        self.particles.len() - 1
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn total_charge(&self) -> f64 {
        self.particles.iter().map(|p| p.charge).sum()
    }

    /// Neutral when the charges cancel to within rounding of their size.
    pub fn is_neutral(&self) -> bool {
        let scale = self
            .particles
            .iter()
            .map(|p| p.charge.abs())
            .fold(1.0, f64::max);
        self.total_charge().abs() <= 1e-12 * scale
    }

    /// Classical dipole `Σ q_i r_i` of a configuration given in the
    /// original (sorted) particle frame.
    pub fn classical_dipole(&self, positions: &[[f64; 3]]) -> [f64; 3] {
        let mut mu = [0.0; 3];
        for (p, r) in self.particles.iter().zip(positions) {
            for c in 0..3 {
                mu[c] += p.charge * r[c];
            }
        }
        mu
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    /// `r'_1 = r_CM`, `r'_j = r_j - r_1` with particle 1 the heaviest.
    HeavyNucleusCentered,
    /// Coordinates relative to the nuclear centre of mass. Recognized but
    /// not implemented.
    NuclearCentreOfMass,
}

/// Linear map from particle positions to (CM, internal) coordinates and its
/// inverse. Row 0 of `forward` produces the centre of mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformation {
    pub forward: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

pub fn build_transformation(sys: &ParticleSystem, kind: TransformKind) -> Result<Transformation> {
    if kind == TransformKind::NuclearCentreOfMass {
        return Err(Error::Unsupported(
            "nuclear-centre-of-mass coordinates are not implemented".into(),
        ));
    }
    let n = sys.len();
    let total = sys.total_mass();
    let masses: Vec<f64> = sys.particles().iter().map(|p| p.mass).collect();

    let mut forward = DMatrix::zeros(n, n);
    for (i, m) in masses.iter().enumerate() {
        forward[(0, i)] = m / total;
    }
    for j in 1..n {
        forward[(j, 0)] = -1.0;
        forward[(j, j)] = 1.0;
    }

    // r_1 = r_CM - Σ_{j>1} (m_j / M) r'_j and r_j = r_1 + r'_j
    let mut inverse = DMatrix::zeros(n, n);
    for i in 0..n {
        inverse[(i, 0)] = 1.0;
        for j in 1..n {
            inverse[(i, j)] = -masses[j] / total;
        }
        if i > 0 {
            inverse[(i, i)] += 1.0;
        }
    }

    let residual = (&forward * &inverse - DMatrix::<f64>::identity(n, n)).amax();
    if residual > 1e-12 {
        return Err(Error::Construction(format!(
            "transformation inverse check failed (max deviation {residual:e})"
        )));
    }
    Ok(Transformation { forward, inverse })
}

/// How the distance of a Coulomb pair is expressed in internal coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    /// `r_{1j} = |r'_j|`
    Single(usize),
    /// `r_{ij} = |r'_i - r'_j|`
    Difference(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoulombPair {
    /// Indices into the sorted particle list.
    pub particles: (usize, usize),
    pub charge_product: f64,
    pub kind: PairKind,
}

impl CoulombPair {
    /// Coefficients `w` such that the pair distance is `|Σ_k w_k r'_k|`.
    pub fn weights(&self, dim: usize) -> DVector<f64> {
        let mut w = DVector::zeros(dim);
        match self.kind {
            PairKind::Single(j) => w[j] = 1.0,
            PairKind::Difference(i, j) => {
                w[i] = 1.0;
                w[j] = -1.0;
            }
        }
        w
    }
}

/// Translation-free Hamiltonian data: kinetic mass matrix over internal
/// coordinates, Coulomb pairs and dipole coefficients.
#[derive(Clone, Debug)]
pub struct InternalSpec {
    pub transform: Transformation,
    /// `Λ_jk = Σ_i t_ji t_ki / m_i` over internal rows; the kinetic energy is
    /// `½ Σ_jk Λ_jk p'_j · p'_k`.
    pub kinetic: DMatrix<f64>,
    /// Kinetic coefficient of the CM row, `1/M`.
    pub cm_kinetic: f64,
    pub pairs: Vec<CoulombPair>,
    dipole_coeffs: Option<DVector<f64>>,
}

impl InternalSpec {
    /// Heavy-nucleus-centred spec for a system.
    pub fn from_system(sys: &ParticleSystem) -> Result<Self> {
        let t = build_transformation(sys, TransformKind::HeavyNucleusCentered)?;
        internal_hamiltonian(sys, &t)
    }

    pub fn dim(&self) -> usize {
        self.kinetic.nrows()
    }

    /// Effective charges multiplying each internal coordinate in `μ`.
    /// Only defined for neutral systems.
    pub fn dipole_coeffs(&self) -> Result<&DVector<f64>> {
        self.dipole_coeffs
            .as_ref()
            .ok_or_else(|| domain("dipole origin-dependent: system is not neutral"))
    }
}

pub fn internal_hamiltonian(sys: &ParticleSystem, t: &Transformation) -> Result<InternalSpec> {
    let n = sys.len();
    if t.forward.nrows() != n || t.forward.ncols() != n {
        return Err(domain("transformation size does not match the system"));
    }
    let masses: Vec<f64> = sys.particles().iter().map(|p| p.mass).collect();
    let full = DMatrix::from_fn(n, n, |j, k| {
        (0..n)
            .map(|i| t.forward[(j, i)] * t.forward[(k, i)] / masses[i])
            .sum::<f64>()
    });
    for k in 1..n {
        if full[(0, k)].abs() > CROSS_COUPLING_LIMIT {
            return Err(Error::Construction(format!(
                "centre-of-mass row couples to internal coordinate {k} ({:e})",
                full[(0, k)]
            )));
        }
    }
    let kinetic = full.view((1, 1), (n - 1, n - 1)).into_owned();
    if kinetic.clone().cholesky().is_none() {
        return Err(Error::Construction(
            "internal kinetic matrix is not positive definite".into(),
        ));
    }

    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let kind = if i == 0 {
                PairKind::Single(j - 1)
            } else {
                PairKind::Difference(i - 1, j - 1)
            };
            pairs.push(CoulombPair {
                particles: (i, j),
                charge_product: sys.particles()[i].charge * sys.particles()[j].charge,
                kind,
            });
        }
    }

    let dipole_coeffs = effective_dipole_charges(sys, &t.inverse).ok();

    Ok(InternalSpec {
        transform: t.clone(),
        kinetic,
        cm_kinetic: full[(0, 0)],
        pairs,
        dipole_coeffs,
    })
}

/// Coefficients `c_j = Σ_i q_i (T⁻¹)_ij` of the internal coordinates in the
/// dipole operator. The CM coefficient is the total charge, so the system
/// must be neutral.
pub fn effective_dipole_charges(sys: &ParticleSystem, t_inv: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !sys.is_neutral() {
        return Err(domain(format!(
            "dipole origin-dependent: total charge {} is not zero",
            sys.total_charge()
        )));
    }
    let n = sys.len();
    let charges: Vec<f64> = sys.particles().iter().map(|p| p.charge).collect();
    Ok(DVector::from_fn(n - 1, |j, _| {
        (0..n).map(|i| charges[i] * t_inv[(i, j + 1)]).sum()
    }))
}
