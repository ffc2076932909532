//! Least-squares polynomial fits of energy against field strength.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Polynomial `Σ_j c_j ε^{p_j}` over an arbitrary set of powers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub powers: Vec<u32>,
    pub coeffs: Vec<f64>,
    pub residual_rms: f64,
    /// Ratio of extreme singular values of the scaled design matrix.
    pub condition_estimate: f64,
    /// The sample count equals the number of powers, so the curve passes
    /// through every point and `residual_rms` carries no information.
    pub interpolation: bool,
}

impl PolyFit {
    pub fn coeff(&self, power: u32) -> Option<f64> {
        self.powers.iter().position(|p| *p == power).map(|i| self.coeffs[i])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.powers
            .iter()
            .zip(&self.coeffs)
            .map(|(p, c)| c * x.powi(*p as i32))
            .sum()
    }

    /// True when every power is even, so the fitted curve is even in `ε`.
    pub fn is_even(&self) -> bool {
        self.powers.iter().all(|p| p % 2 == 0)
    }
}

/// Fits `values ≈ Σ_j c_j x^{p_j}` by least squares.
///
/// The abscissae are divided by `max|x|` before the design matrix is formed
/// and the coefficients are scaled back afterwards. Equal sample and power
/// counts give exact interpolation.
pub fn polyfit(xs: &[f64], values: &[f64], powers: &[u32]) -> Result<PolyFit> {
    if xs.len() != values.len() {
        return Err(domain("fields and values differ in length"));
    }
    if powers.is_empty() {
        return Err(domain("at least one power is required"));
    }
    if powers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(domain("powers must be strictly increasing"));
    }
    if xs.len() < powers.len() {
        return Err(domain(format!(
            "underdetermined fit: {} samples for {} powers",
            xs.len(),
            powers.len()
        )));
    }
    if xs.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(domain("samples must be finite"));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(domain("fields must be distinct"));
    }

    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let design = DMatrix::from_fn(xs.len(), powers.len(), |i, j| (xs[i] / scale).powi(powers[j] as i32));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > f64::EPSILON * smax * xs.len() as f64) {
        return Err(domain("the sample fields cannot separate the requested powers"));
    }
    let rhs = DVector::from_column_slice(values);
    let scaled = match symmetric_folding(xs, values) {
        Some(folded) => solve_folded(&folded, powers, scale)?,
        None => svd.solve(&rhs, 0.0).map_err(|e| domain(e.to_string()))?,
    };
    let residual = &design * &scaled - &rhs;
    let coeffs: Vec<f64> = scaled
        .iter()
        .zip(powers)
        .map(|(c, p)| c / scale.powi(*p as i32))
        .collect();
    Ok(PolyFit {
        powers: powers.to_vec(),
        coeffs,
        residual_rms: (residual.norm_squared() / xs.len() as f64).sqrt(),
        condition_estimate: smax / smin,
        interpolation: xs.len() == powers.len(),
    })
}

/// One `(x, -x)` pair or the origin, with its even and odd sample parts.
struct Folded {
    x: f64,
    even: f64,
    odd: f64,
    weight: f64,
}

/// Splits samples on a grid closed under `x → -x` into even and odd parts.
fn symmetric_folding(xs: &[f64], values: &[f64]) -> Option<Vec<Folded>> {
    let mut out = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        if x < 0.0 {
            continue;
        }
        if x == 0.0 {
            out.push(Folded { x, even: values[i], odd: 0.0, weight: 1.0 });
            continue;
        }
        let j = xs.iter().position(|y| *y == -x)?;
        out.push(Folded {
            x,
            even: 0.5 * (values[i] + values[j]),
            odd: 0.5 * (values[i] - values[j]),
            weight: 2.0,
        });
    }
    if xs.iter().filter(|x| **x < 0.0).count() != out.iter().filter(|f| f.x > 0.0).count() {
        return None;
    }
    Some(out)
}

/// On a symmetric grid the even and odd columns of the design matrix are
/// orthogonal, so the two halves of the least-squares problem decouple.
fn solve_folded(folded: &[Folded], powers: &[u32], scale: f64) -> Result<DVector<f64>> {
    let mut scaled = DVector::zeros(powers.len());
    for parity in [0, 1] {
        let cols: Vec<usize> = (0..powers.len()).filter(|j| powers[*j] % 2 == parity).collect();
        if cols.is_empty() {
            continue;
        }
        let rows: Vec<&Folded> = folded.iter().filter(|f| parity == 0 || f.x != 0.0).collect();
        let a = DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            rows[i].weight.sqrt() * (rows[i].x / scale).powi(powers[cols[j]] as i32)
        });
        let b = DVector::from_iterator(
            rows.len(),
            rows.iter().map(|f| f.weight.sqrt() * if parity == 0 { f.even } else { f.odd }),
        );
        let part = a.svd(true, true).solve(&b, 0.0).map_err(|e| domain(e.to_string()))?;
        for (k, j) in cols.iter().enumerate() {
            scaled[*j] = part[k];
        }
    }
    Ok(scaled)
}

/// Dipole read off a fit with a linear term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipoleEstimate {
    /// `μ_z = -e₁`, from `dE/dε = -⟨μ_z⟩`.
    pub dipole: f64,
    pub e1_abs: f64,
}

pub fn extract_dipole(fit: &PolyFit) -> Result<DipoleEstimate> {
    let e1 = fit
        .coeff(1)
        .ok_or_else(|| domain("even-only fit has no dipole term by construction"))?;
    Ok(DipoleEstimate { dipole: -e1, e1_abs: e1.abs() })
}
