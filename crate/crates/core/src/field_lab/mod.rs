//! Finite-field experiments: sweeps, fits, Hellmann–Feynman checks and
//! parity diagnostics.

mod fit;

pub use fit::{extract_dipole, polyfit, DipoleEstimate, PolyFit};

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ecg::{parity_partner, BasisSet};
use crate::error::{domain, Result};
use crate::integrals::{overlap, OperatorMatrices};
use crate::system::InternalSpec;
use crate::variational::{expectation, optimize_nonlinear, solve_lowest, OptimizeOptions, VariationalState};

/// Default central-difference step for Hellmann–Feynman checks (a.u.).
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Fields of the criticized three-point protocol (a.u.).
pub const CA_FIELDS: [f64; 3] = [0.0, -0.0016, -0.0032];

/// Energy and dipole expectation at one field strength.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub epsilon: f64,
    pub energy: f64,
    pub mz_expectation: f64,
}

impl FieldPoint {
    pub fn from_state(epsilon: f64, state: &VariationalState, matrices: &OperatorMatrices) -> Result<Self> {
        Ok(FieldPoint {
            epsilon,
            energy: state.energy,
            mz_expectation: expectation(matrices.dipole()?, state, &matrices.overlap)?,
        })
    }
}

/// Lowest state of a fixed basis at `epsilon`.
pub fn fixed_basis_point(basis: &BasisSet, spec: &InternalSpec, epsilon: f64, lin_dep_tol: f64) -> Result<FieldPoint> {
    let matrices = OperatorMatrices::build(basis, spec)?;
    let state = solve_lowest(&matrices.hamiltonian(epsilon)?, &matrices.overlap, lin_dep_tol)?;
    FieldPoint::from_state(epsilon, &state, &matrices)
}

/// Optimizes `start` at `epsilon` and reports the resulting point.
pub fn optimized_point(
    start: &BasisSet,
    spec: &InternalSpec,
    epsilon: f64,
    opts: &OptimizeOptions,
) -> Result<FieldPoint> {
    let out = optimize_nonlinear(start, spec, epsilon, opts)?;
    FieldPoint::from_state(epsilon, &out.state, &out.matrices)
}

/// `|dE/dε + ⟨μ_z⟩_ε|` with the derivative taken by central differences
/// over whatever procedure `provider` uses to produce a state at a field.
pub fn hf_residual<P>(mut provider: P, epsilon: f64, fd_step: f64) -> Result<f64>
where
    P: FnMut(f64) -> Result<FieldPoint>,
{
    if !(fd_step > 0.0) || !fd_step.is_finite() {
        return Err(domain("fd_step must be positive"));
    }
    let centre = provider(epsilon)?;
    let plus = provider(epsilon + fd_step)?;
    let minus = provider(epsilon - fd_step)?;
    let derivative = (plus.energy - minus.energy) / (2.0 * fd_step);
    Ok((derivative + centre.mz_expectation).abs())
}

/// Parity content of a zero-field state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityDiagnostic {
    pub mz_at_zero: f64,
    /// `⟨ψ|î|ψ⟩` for the normalized state; ±1 for a state of definite parity.
    pub parity_overlap: f64,
}

pub fn parity_diagnostic(basis: &BasisSet, spec: &InternalSpec, state: &VariationalState) -> Result<ParityDiagnostic> {
    let members = basis.members();
    if state.coefficients.len() != members.len() {
        return Err(domain("state does not belong to this basis"));
    }
    let partners: Vec<_> = members.iter().map(parity_partner).collect();
    let k = members.len();
    let mut inv = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            inv[(i, j)] = overlap(&members[i], &partners[j])?;
        }
    }
    let matrices = OperatorMatrices::build(basis, spec)?;
    let c = state.coefficient_vector();
    let norm = (c.transpose() * &matrices.overlap * &c)[(0, 0)];
    Ok(ParityDiagnostic {
        mz_at_zero: expectation(matrices.dipole()?, state, &matrices.overlap)?,
        parity_overlap: (c.transpose() * inv * &c)[(0, 0)] / norm,
    })
}

/// Sampling pattern of a field grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// The grid is closed under `ε → -ε`.
    Symmetric,
    /// All nonzero fields share one sign.
    OneSided,
    Mixed,
}

impl Protocol {
    pub fn classify(fields: &[f64]) -> Protocol {
        let closed = fields.iter().all(|f| fields.iter().any(|g| *g == -*f));
        if closed {
            return Protocol::Symmetric;
        }
        let pos = fields.iter().any(|f| *f > 0.0);
        let neg = fields.iter().any(|f| *f < 0.0);
        if pos && neg {
            Protocol::Mixed
        } else {
            Protocol::OneSided
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub reoptimize_per_field: bool,
    pub optimize: OptimizeOptions,
    /// Step of the per-field Hellmann–Feynman check; `None` skips it.
    pub fd_step: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            reoptimize_per_field: false,
            optimize: OptimizeOptions::default(),
            fd_step: Some(DEFAULT_FD_STEP),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub epsilon: f64,
    pub energy: f64,
    pub mz_expectation: f64,
    pub hf_residual: Option<f64>,
    /// Optimizer outcome when the field was reoptimized.
    pub converged: Option<bool>,
    pub stationarity_norm: Option<f64>,
}

/// Raw output of [`sweep`], in the order the fields were given.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub samples: Vec<FieldSample>,
    pub bases: Vec<BasisSet>,
    pub states: Vec<VariationalState>,
    pub reoptimized: bool,
}

/// Visiting order: by `|ε|`, positive before negative.
fn visiting_order(fields: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fields.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (fields[a], fields[b]);
        x.abs().total_cmp(&y.abs()).then(y.total_cmp(&x))
    });
    order
}

/// Energies and dipole expectations over a list of fields.
///
/// With reoptimization each field starts from the basis optimized at the
/// previous field in `|ε|` order, except that `-ε` starts from the inverted
/// basis of `+ε` when that field was already done. The inverted basis is
/// exactly as stationary at `-ε` as the original was at `+ε`, which keeps
/// the reoptimized energies even.
pub fn sweep(basis: &BasisSet, spec: &InternalSpec, fields: &[f64], opts: &SweepOptions) -> Result<Sweep> {
    if fields.len() < 2 {
        return Err(domain("a sweep needs at least two fields"));
    }
    if fields.iter().any(|f| !f.is_finite()) {
        return Err(domain("fields must be finite"));
    }
    for (i, a) in fields.iter().enumerate() {
        if fields[..i].contains(a) {
            return Err(domain(format!("duplicate field {a}")));
        }
    }
    if let Some(h) = opts.fd_step {
        if !(h > 0.0) {
            return Err(domain("fd_step must be positive"));
        }
    }
    let tol = opts.optimize.lin_dep_tol;
    let mut samples: Vec<Option<FieldSample>> = vec![None; fields.len()];
    let mut bases: Vec<Option<BasisSet>> = vec![None; fields.len()];
    let mut states: Vec<Option<VariationalState>> = vec![None; fields.len()];
    let mut previous = basis.clone();

    for idx in visiting_order(fields) {
        let eps = fields[idx];
        if !opts.reoptimize_per_field {
            let matrices = OperatorMatrices::build(basis, spec)?;
            let state = solve_lowest(&matrices.hamiltonian(eps)?, &matrices.overlap, tol)?;
            let point = FieldPoint::from_state(eps, &state, &matrices)?;
            let hf = match opts.fd_step {
                Some(h) => Some(hf_residual(|e| fixed_basis_point(basis, spec, e, tol), eps, h)?),
                None => None,
            };
            samples[idx] = Some(FieldSample {
                epsilon: eps,
                energy: point.energy,
                mz_expectation: point.mz_expectation,
                hf_residual: hf,
                converged: None,
                stationarity_norm: None,
            });
            bases[idx] = Some(basis.clone());
            states[idx] = Some(state);
            continue;
        }

        let mirror = fields.iter().position(|f| *f == -eps && *f != eps);
        let start = match mirror.and_then(|m| bases[m].as_ref()) {
            Some(b) => b.inverted(),
            None => previous.clone(),
        };
        let out = optimize_nonlinear(&start, spec, eps, &opts.optimize)?;
        let point = FieldPoint::from_state(eps, &out.state, &out.matrices)?;
        let hf = match opts.fd_step {
            Some(h) => Some(hf_residual(
                |e| {
                    if e == eps {
                        Ok(point)
                    } else {
                        optimized_point(&start, spec, e, &opts.optimize)
                    }
                },
                eps,
                h,
            )?),
            None => None,
        };
        samples[idx] = Some(FieldSample {
            epsilon: eps,
            energy: point.energy,
            mz_expectation: point.mz_expectation,
            hf_residual: hf,
            converged: Some(out.converged),
            stationarity_norm: out.state.stationarity_norm,
        });
        previous = out.basis.clone();
        bases[idx] = Some(out.basis);
        states[idx] = Some(out.state);
    }

    Ok(Sweep {
        samples: samples.into_iter().map(Option::unwrap).collect(),
        bases: bases.into_iter().map(Option::unwrap).collect(),
        states: states.into_iter().map(Option::unwrap).collect(),
        reoptimized: opts.reoptimize_per_field,
    })
}

/// Everything one field sweep produced, ready for serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub fields: Vec<f64>,
    pub energies: Vec<f64>,
    pub dipole_expectations: Vec<f64>,
    pub hf_residuals: Vec<Option<f64>>,
    pub fit: PolyFit,
    /// Present when the fit has a linear term.
    pub dipole: Option<DipoleEstimate>,
    pub parity_diag: ParityDiagnostic,
    pub protocol: Protocol,
    pub reoptimized: bool,
    pub converged: Vec<Option<bool>>,
}

impl SweepReport {
    /// Fits the sweep and attaches the zero-field parity diagnostic.
    ///
    /// The diagnostic uses the state at `ε = 0` when the grid contains it and
    /// otherwise solves `reference` at zero field.
    pub fn assemble(
        sweep: &Sweep,
        reference: &BasisSet,
        spec: &InternalSpec,
        powers: &[u32],
        lin_dep_tol: f64,
    ) -> Result<SweepReport> {
        let fields: Vec<f64> = sweep.samples.iter().map(|s| s.epsilon).collect();
        let energies: Vec<f64> = sweep.samples.iter().map(|s| s.energy).collect();
        let fit = polyfit(&fields, &energies, powers)?;
        let dipole = if powers.contains(&1) { Some(extract_dipole(&fit)?) } else { None };
        let parity_diag = match fields.iter().position(|f| *f == 0.0) {
            Some(z) => parity_diagnostic(&sweep.bases[z], spec, &sweep.states[z])?,
            None => {
                let m = OperatorMatrices::build(reference, spec)?;
                let state = solve_lowest(&m.field_free(), &m.overlap, lin_dep_tol)?;
                parity_diagnostic(reference, spec, &state)?
            }
        };
        Ok(SweepReport {
            protocol: Protocol::classify(&fields),
            fields,
            energies,
            dipole_expectations: sweep.samples.iter().map(|s| s.mz_expectation).collect(),
            hf_residuals: sweep.samples.iter().map(|s| s.hf_residual).collect(),
            fit,
            dipole,
            parity_diag,
            reoptimized: sweep.reoptimized,
            converged: sweep.samples.iter().map(|s| s.converged).collect(),
        })
    }

    /// Flat table `epsilon,energy,mz_expectation,hf_residual` in shortest
    /// round-trip decimal form; a skipped residual leaves its cell empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,energy,mz_expectation,hf_residual\n");
        for i in 0..self.fields.len() {
            let hf = self.hf_residuals[i].map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.fields[i], self.energies[i], self.dipole_expectations[i], hf
            );
        }
        out
    }
}

/// Sweep over `fields`, fitted with `powers`.
pub fn run_sweep(
    basis: &BasisSet,
    spec: &InternalSpec,
    fields: &[f64],
    powers: &[u32],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    let sweep = sweep(basis, spec, fields, opts)?;
    SweepReport::assemble(&sweep, basis, spec, powers, opts.optimize.lin_dep_tol)
}

/// Re-enacts the three-field protocol: fields `{0, -0.0016, -0.0032}`,
/// full quadratic fit, reoptimization at every field.
pub fn ca_protocol(basis: &BasisSet, spec: &InternalSpec, optimize: &OptimizeOptions) -> Result<SweepReport> {
    let opts = SweepOptions {
        reoptimize_per_field: true,
        optimize: *optimize,
        fd_step: Some(DEFAULT_FD_STEP),
    };
    run_sweep(basis, spec, &CA_FIELDS, &[0, 1, 2], &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecg::{parity_close, seed_basis, FloatingEcg, Placement};
    use crate::system::ParticleSystem;
    use nalgebra::DVector;

    fn hydrogen() -> InternalSpec {
        InternalSpec::from_system(&ParticleSystem::hydrogen()).unwrap()
    }

    #[test]
    fn order_is_by_magnitude_positive_first() {
        let fields = [-0.002, 0.001, 0.0, -0.001, 0.002];
        let order: Vec<f64> = visiting_order(&fields).iter().map(|i| fields[*i]).collect();
        assert_eq!(order, vec![0.0, 0.001, -0.001, 0.002, -0.002]);
    }

    #[test]
    fn protocol_classification() {
        assert_eq!(Protocol::classify(&[-0.1, 0.0, 0.1]), Protocol::Symmetric);
        assert_eq!(Protocol::classify(&CA_FIELDS), Protocol::OneSided);
        assert_eq!(Protocol::classify(&[0.0, 0.1, 0.2]), Protocol::OneSided);
        assert_eq!(Protocol::classify(&[-0.1, 0.2]), Protocol::Mixed);
    }

    #[test]
    fn sweep_rejects_degenerate_grids() {
        let spec = hydrogen();
        let basis = seed_basis(&spec, 2, Placement::Origin).unwrap();
        let opts = SweepOptions::default();
        assert!(sweep(&basis, &spec, &[0.001], &opts).is_err());
        assert!(sweep(&basis, &spec, &[0.001, 0.002, 0.001], &opts).is_err());
    }

    #[test]
    fn hf_residual_rejects_bad_step() {
        let p = |e: f64| Ok(FieldPoint { epsilon: e, energy: 0.0, mz_expectation: 0.0 });
        assert!(hf_residual(p, 0.0, 0.0).is_err());
        assert!(hf_residual(p, 0.0, -1e-4).is_err());
    }

    #[test]
    fn fixed_basis_obeys_hellmann_feynman() {
        let spec = hydrogen();
        let basis = seed_basis(&spec, 4, Placement::Random { seed: 8, scale: 1.0 }).unwrap();
        let r = hf_residual(|e| fixed_basis_point(&basis, &spec, e, 1e-12), 0.002, 1e-4).unwrap();
        assert!(r < 1e-8, "{r:e}");
    }

    #[test]
    fn parity_overlap_cases() {
        let spec = hydrogen();
        let origin = seed_basis(&spec, 3, Placement::Origin).unwrap();
        let m = OperatorMatrices::build(&origin, &spec).unwrap();
        let st = solve_lowest(&m.field_free(), &m.overlap, 1e-12).unwrap();
        let d = parity_diagnostic(&origin, &spec, &st).unwrap();
        assert_eq!(d.mz_at_zero, 0.0);
        assert!((d.parity_overlap - 1.0).abs() < 1e-14);

        let shifted = BasisSet::new(
            (0..3)
                .map(|k| FloatingEcg::isotropic(0.2 * 3f64.powi(k), DVector::from_vec(vec![0.0, 0.0, 3.0])).unwrap())
                .collect(),
        )
        .unwrap();
        let m = OperatorMatrices::build(&shifted, &spec).unwrap();
        let st = solve_lowest(&m.field_free(), &m.overlap, 1e-12).unwrap();
        let d = parity_diagnostic(&shifted, &spec, &st).unwrap();
        assert!(d.parity_overlap.abs() < 1.0);
        assert!(d.mz_at_zero.abs() > 1e-3);

        let closed = parity_close(&shifted);
        let m = OperatorMatrices::build(&closed, &spec).unwrap();
        let st = solve_lowest(&m.field_free(), &m.overlap, 1e-12).unwrap();
        let d = parity_diagnostic(&closed, &spec, &st).unwrap();
        assert!((d.parity_overlap.abs() - 1.0).abs() < 1e-10);
        assert!(d.mz_at_zero.abs() < 1e-10);
    }

    #[test]
    fn csv_has_header_and_round_trips() {
        let spec = hydrogen();
        let basis = parity_close(&seed_basis(&spec, 3, Placement::Random { seed: 1, scale: 0.5 }).unwrap());
        let report = run_sweep(&basis, &spec, &[-0.001, 0.0, 0.001], &[0, 2], &SweepOptions::default()).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epsilon,energy,mz_expectation,hf_residual"));
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[1].parse::<f64>().unwrap().to_bits(), report.energies[i].to_bits());
        }
        assert_eq!(report.protocol, Protocol::Symmetric);
        assert!(report.dipole.is_none());
    }
}
