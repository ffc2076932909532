//! Derivative-free optimization of the nonlinear Gaussian parameters.
//!
//! Every iteration measures the gradient `∂E/∂θ_i` by central finite
//! differences; its largest component is the stationarity norm and the
//! search stops once it falls below `stat_tol`. The same probe gives a
//! diagonal curvature estimate that seeds a BFGS inverse Hessian, and the
//! quasi-Newton direction is searched with parabolic backtracking. When the
//! line search fails the metric is reset and a coordinate sweep (seeded
//! random order, parabolic step through `θ_i ± δ_i`) takes its place.
//!
//! The parameters are the lower-triangular Cholesky entries and the shift
//! components of every member. In parity-constrained mode the partner of a
//! shifted member is slaved to `(L, -s)` and centred members keep `s = 0`,
//! so parity closure survives every step.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{solve_lowest, VariationalState, DEFAULT_LIN_DEP_TOL};
use crate::ecg::{BasisSet, FloatingEcg};
use crate::error::{domain, Result};
use crate::integrals::OperatorMatrices;
use crate::system::InternalSpec;

/// Relative step of the finite-difference stationarity probe.
pub const PROBE_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Maximum number of sweeps.
    pub max_iters: usize,
    pub stat_tol: f64,
    pub seed: u64,
    pub parity_constrained: bool,
    pub lin_dep_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iters: 2000,
            stat_tol: 1e-7,
            seed: 0,
            parity_constrained: false,
            lin_dep_tol: DEFAULT_LIN_DEP_TOL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimized {
    pub basis: BasisSet,
    pub state: VariationalState,
    pub matrices: OperatorMatrices,
    pub converged: bool,
    pub sweeps: usize,
    pub evaluations: usize,
}

/// A block of parameters driving one member or one parity pair.
#[derive(Clone, Debug)]
struct Group {
    members: Vec<usize>,
    shifted: bool,
    offset: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    dim: usize,
    groups: Vec<Group>,
    /// Group owning each parameter.
    owner: Vec<usize>,
    size: usize,
}

impl Layout {
    fn new(basis: &BasisSet, constrained: bool) -> Result<Self> {
        let dim = basis.dim();
        let tri = dim * (dim + 1) / 2;
        let mut groups = Vec::new();
        if constrained {
            let pairing = basis
                .pairing()
                .ok_or_else(|| domain("parity-constrained optimization needs a parity-closed basis"))?;
            for (i, &p) in pairing.iter().enumerate() {
                if p == i {
                    groups.push(Group { members: vec![i], shifted: false, offset: 0 });
                } else if i < p {
                    groups.push(Group { members: vec![i, p], shifted: true, offset: 0 });
                }
            }
        } else {
            for i in 0..basis.len() {
                groups.push(Group { members: vec![i], shifted: true, offset: 0 });
            }
        }
        let mut owner = Vec::new();
        let mut offset = 0;
        for (gi, g) in groups.iter_mut().enumerate() {
            g.offset = offset;
            let width = tri + if g.shifted { 3 * dim } else { 0 };
            owner.extend(std::iter::repeat_n(gi, width));
            offset += width;
        }
        Ok(Layout { dim, groups, owner, size: offset })
    }

    fn encode(&self, basis: &BasisSet) -> Vec<f64> {
        let mut theta = vec![0.0; self.size];
        for g in &self.groups {
            let m = &basis.members()[g.members[0]];
            let mut k = g.offset;
            for i in 0..self.dim {
                for j in 0..=i {
                    theta[k] = m.chol()[(i, j)];
                    k += 1;
                }
            }
            if g.shifted {
                for v in m.shift().iter() {
                    theta[k] = *v;
                    k += 1;
                }
            }
        }
        theta
    }

    fn decode_group(&self, theta: &[f64], gi: usize) -> Result<Vec<FloatingEcg>> {
        let g = &self.groups[gi];
        let n = self.dim;
        let mut chol = DMatrix::zeros(n, n);
        let mut k = g.offset;
        for i in 0..n {
            for j in 0..=i {
                chol[(i, j)] = theta[k];
                k += 1;
            }
        }
        let shift = if g.shifted {
            DVector::from_column_slice(&theta[k..k + 3 * n])
        } else {
            DVector::zeros(3 * n)
        };
        let rep = FloatingEcg::new(chol.clone(), shift.clone())?;
        let mut out = vec![rep];
        if g.members.len() == 2 {
            out.push(FloatingEcg::new(chol, -shift)?);
        }
        Ok(out)
    }
}

/// Energy evaluations with incremental matrix updates.
struct Evaluator<'a> {
    spec: &'a InternalSpec,
    epsilon: f64,
    lin_dep_tol: f64,
    layout: Layout,
    members: Vec<FloatingEcg>,
    matrices: OperatorMatrices,
    evaluations: usize,
}

impl<'a> Evaluator<'a> {
    fn energy_of(&self, m: &OperatorMatrices) -> f64 {
        let h = match m.hamiltonian(self.epsilon) {
            Ok(h) => h,
            Err(_) => return f64::INFINITY,
        };
        match solve_lowest(&h, &m.overlap, self.lin_dep_tol) {
            Ok(s) if s.energy.is_finite() => s.energy,
            _ => f64::INFINITY,
        }
    }

    /// Energy with the parameters of one group replaced.
    fn trial_group(&mut self, theta: &[f64], gi: usize) -> f64 {
        self.evaluations += 1;
        let Ok(updated) = self.layout.decode_group(theta, gi) else {
            return f64::INFINITY;
        };
        let idx = self.layout.groups[gi].members.clone();
        let mut members = self.members.clone();
        for (slot, g) in idx.iter().zip(updated) {
            members[*slot] = g;
        }
        let mut m = self.matrices.clone();
        if m.update_members(&members, &idx, self.spec).is_err() {
            return f64::INFINITY;
        }
        self.energy_of(&m)
    }

    fn commit_group(&mut self, theta: &[f64], gi: usize) -> Result<()> {
        let updated = self.layout.decode_group(theta, gi)?;
        let idx = self.layout.groups[gi].members.clone();
        for (slot, g) in idx.iter().zip(updated) {
            self.members[*slot] = g;
        }
        self.matrices.update_members(&self.members, &idx, self.spec)
    }

    fn decode_all(&self, theta: &[f64]) -> Result<Vec<FloatingEcg>> {
        let mut members = self.members.clone();
        for gi in 0..self.layout.groups.len() {
            let updated = self.layout.decode_group(theta, gi)?;
            for (slot, g) in self.layout.groups[gi].members.iter().zip(updated) {
                members[*slot] = g;
            }
        }
        Ok(members)
    }

    fn trial_full(&mut self, theta: &[f64]) -> f64 {
        self.evaluations += 1;
        let Ok(members) = self.decode_all(theta) else {
            return f64::INFINITY;
        };
        let Ok(basis) = BasisSet::new(members) else {
            return f64::INFINITY;
        };
        match OperatorMatrices::build(&basis, self.spec) {
            Ok(m) => self.energy_of(&m),
            Err(_) => f64::INFINITY,
        }
    }

    fn commit_full(&mut self, theta: &[f64]) -> Result<()> {
        self.members = self.decode_all(theta)?;
        self.matrices = OperatorMatrices::build(&BasisSet::new(self.members.clone())?, self.spec)?;
        Ok(())
    }

    /// Energy with a single parameter moved by `delta`.
    fn trial_coordinate(&mut self, theta: &mut [f64], i: usize, delta: f64) -> f64 {
        let old = theta[i];
        theta[i] = old + delta;
        let e = self.trial_group(theta, self.layout.owner[i]);
        theta[i] = old;
        e
    }

    /// Central-difference gradient and diagonal curvature at `theta`.
    fn probe(&mut self, theta: &mut [f64], f: f64) -> (Vec<f64>, Vec<f64>) {
        let mut grad = vec![0.0; theta.len()];
        let mut curv = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let h = PROBE_STEP * theta[i].abs().max(1.0);
            let plus = self.trial_coordinate(theta, i, h);
            let minus = self.trial_coordinate(theta, i, -h);
            grad[i] = (plus - minus) / (2.0 * h);
            curv[i] = (plus + minus - 2.0 * f) / (h * h);
        }
        (grad, curv)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_finite() { m.max(x.abs()) } else { f64::INFINITY })
}

/// Inverse of the probed diagonal curvature, with a floor for flat or
/// concave directions.
fn diagonal_metric(curv: &[f64], theta: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        curv.len(),
        curv.iter().zip(theta).map(|(c, t)| {
            let floor = 1e-2 / parameter_scale(*t).powi(2);
            1.0 / if c.is_finite() { c.max(floor) } else { floor }
        }),
    ))
}

fn parameter_scale(theta: f64) -> f64 {
    theta.abs().max(0.1)
}

fn curv_of(ev: &mut Evaluator, theta: &mut [f64], f: f64) -> Vec<f64> {
    ev.probe(theta, f).1
}

fn order_shuffled<'o>(order: &'o mut [usize], rng: &mut ChaCha8Rng) -> &'o [usize] {
    order.shuffle(rng);
    order
}

/// Parabolic step through `θ_i ± δ_i`; returns the new energy.
fn coordinate_step(ev: &mut Evaluator, theta: &mut [f64], steps: &mut [f64], i: usize, f: f64) -> Result<f64> {
    let min_step = PROBE_STEP * theta[i].abs().max(1.0);
    let max_step = 0.5 * parameter_scale(theta[i]);
    let d = steps[i].clamp(min_step, max_step);
    let fp = ev.trial_coordinate(theta, i, d);
    let fm = ev.trial_coordinate(theta, i, -d);
    let curv = fp + fm - 2.0 * f;
    let t = if curv > 0.0 && curv.is_finite() {
        (d * (fm - fp) / (2.0 * curv)).clamp(-8.0 * d, 8.0 * d)
    } else if fp < fm {
        2.0 * d
    } else {
        -2.0 * d
    };
    let ft = ev.trial_coordinate(theta, i, t);
    let mut best = (0.0, f);
    for cand in [(d, fp), (-d, fm), (t, ft)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    if best.0 == 0.0 {
        steps[i] = (0.25 * d).max(min_step);
        return Ok(f);
    }
    theta[i] += best.0;
    ev.commit_group(theta, ev.layout.owner[i])?;
    steps[i] = best.0.abs().clamp(min_step, max_step);
    Ok(best.1)
}

/// Backtracking along `dir` from `alpha = 1` with parabolic reduction.
fn line_search(ev: &mut Evaluator, theta: &[f64], dir: &DVector<f64>, f: f64, slope: f64) -> Option<(f64, f64)> {
    let mut alpha = 1.0;
    for _ in 0..12 {
        let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + alpha * d).collect();
        let fa = ev.trial_full(&trial);
        if fa < f {
            return Some((alpha, fa));
        }
        let denom = 2.0 * (fa - f - slope * alpha);
        let next = if denom > 0.0 && denom.is_finite() { -slope * alpha * alpha / denom } else { 0.1 * alpha };
        alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
    }
    None
}

/// Minimizes the lowest eigenvalue of `H(ε)` over the nonlinear parameters.
///
/// Non-convergence within `max_iters` sweeps is reported through
/// [`Optimized::converged`], not as an error.
pub fn optimize_nonlinear(
    basis: &BasisSet,
    spec: &InternalSpec,
    epsilon: f64,
    opts: &OptimizeOptions,
) -> Result<Optimized> {
    if !(opts.stat_tol > 0.0) {
        return Err(domain("stat_tol must be positive"));
    }
    let layout = Layout::new(basis, opts.parity_constrained)?;
    let matrices = OperatorMatrices::build(basis, spec)?;
    let mut ev = Evaluator {
        spec,
        epsilon,
        lin_dep_tol: opts.lin_dep_tol,
        layout,
        members: basis.members().to_vec(),
        matrices,
        evaluations: 0,
    };
    let mut theta = ev.layout.encode(basis);
    let mut f = ev.energy_of(&ev.matrices.clone());
    if !f.is_finite() {
        solve_lowest(&ev.matrices.hamiltonian(epsilon)?, &ev.matrices.overlap, opts.lin_dep_tol)?;
    }
    let p = theta.len();
    let mut steps: Vec<f64> = theta.iter().map(|t| 0.05 * parameter_scale(*t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..p).collect();

    let mut sweeps = 0;
    let (mut grad, curv) = ev.probe(&mut theta, f);
    let mut metric = diagonal_metric(&curv, &theta);
    let mut stat = max_abs(&grad);
    let mut converged = stat <= opts.stat_tol;
    while !converged && sweeps < opts.max_iters {
        sweeps += 1;
        let g = DVector::from_column_slice(&grad);
        let mut dir = -(&metric * &g);
        if !(dir.dot(&g) < 0.0) {
            metric = diagonal_metric(&curv_of(&mut ev, &mut theta, f), &theta);
            dir = -(&metric * &g);
        }
        let reach = dir
            .iter()
            .zip(&theta)
            .map(|(d, t)| d.abs() / (0.5 * parameter_scale(*t)))
            .fold(0.0, f64::max);
        if reach > 1.0 {
            dir /= reach;
        }

        if let Some((alpha, fa)) = line_search(&mut ev, &theta, &dir, f, dir.dot(&g)) {
            let step = dir * alpha;
            for (t, d) in theta.iter_mut().zip(step.iter()) {
                *t += d;
            }
            ev.commit_full(&theta)?;
            f = fa;
            let (g_new, c_new) = ev.probe(&mut theta, f);
            let y = DVector::from_column_slice(&g_new) - &g;
            let sy = step.dot(&y);
            if sy > 1e-12 * step.norm() * y.norm() && sy.is_finite() {
                let rho = 1.0 / sy;
                let left = DMatrix::identity(p, p) - &step * y.transpose() * rho;
                metric = &left * &metric * left.transpose() + &step * step.transpose() * rho;
            } else {
                metric = diagonal_metric(&c_new, &theta);
            }
            grad = g_new;
        } else {
            for &i in order_shuffled(&mut order, &mut rng) {
                f = coordinate_step(&mut ev, &mut theta, &mut steps, i, f)?;
            }
            let (g_new, c_new) = ev.probe(&mut theta, f);
            metric = diagonal_metric(&c_new, &theta);
            grad = g_new;
        }
        stat = max_abs(&grad);
        converged = stat <= opts.stat_tol;
    }

    let basis = BasisSet::new(ev.members.clone())?;
    let matrices = OperatorMatrices::build(&basis, spec)?;
    let mut state = solve_lowest(&matrices.hamiltonian(epsilon)?, &matrices.overlap, opts.lin_dep_tol)?;
    state.stationarity_norm = Some(stat);
    Ok(Optimized {
        basis,
        state,
        matrices,
        converged,
        sweeps,
        evaluations: ev.evaluations,
    })
}
