//! Floating s-type explicitly correlated Gaussians.
//!
//! A basis function over `n` internal coordinates `x = (r'_1, …, r'_n)` is
//!
//! ```text
//! g(x) = exp(-(x - s)ᵀ (A ⊗ I₃) (x - s)),   A = L Lᵀ
//! ```
//!
//! with `L` lower triangular. Shifts are stored flat, three Cartesian
//! components per internal coordinate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::system::InternalSpec;

/// Absolute tolerance for deciding that two shifts are mirror images.
pub const SHIFT_MATCH_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FloatingEcg {
    chol: DMatrix<f64>,
    shift: DVector<f64>,
}

impl FloatingEcg {
    /// Builds a Gaussian from its Cholesky factor and flat shift vector.
    ///
    /// Entries above the diagonal must be zero and the diagonal nonzero.
    /// Columns with a negative diagonal are flipped, which leaves `A`
    /// unchanged.
    pub fn new(chol: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let n = chol.nrows();
        if n == 0 || chol.ncols() != n {
            return Err(domain("Cholesky factor must be square and non-empty"));
        }
        if shift.len() != 3 * n {
            return Err(domain(format!(
                "shift has {} components, expected {}",
                shift.len(),
                3 * n
            )));
        }
        let mut chol = chol;
        for i in 0..n {
            for j in (i + 1)..n {
                if chol[(i, j)] != 0.0 {
                    return Err(domain("Cholesky factor must be lower triangular"));
                }
            }
            let d = chol[(i, i)];
            if !d.is_finite() || d == 0.0 {
                return Err(domain("Cholesky factor needs a nonzero diagonal"));
            }
            if d < 0.0 {
                for r in i..n {
                    chol[(r, i)] = -chol[(r, i)];
                }
            }
        }
        if chol.iter().chain(shift.iter()).any(|v| !v.is_finite()) {
            return Err(domain("non-finite Gaussian parameter"));
        }
        Ok(FloatingEcg { chol, shift })
    }

    /// `A = a·I` with the given shift.
    pub fn isotropic(exponent: f64, shift: DVector<f64>) -> Result<Self> {
        if !(exponent > 0.0) {
            return Err(domain("exponent must be positive"));
        }
        let n = shift.len() / 3;
        Self::new(DMatrix::identity(n, n) * exponent.sqrt(), shift)
    }

    /// Number of internal coordinates.
    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Shift of one internal coordinate as a 3-vector.
    pub fn shift_of(&self, coord: usize) -> [f64; 3] {
        [
            self.shift[3 * coord],
            self.shift[3 * coord + 1],
            self.shift[3 * coord + 2],
        ]
    }

    pub fn is_centred(&self) -> bool {
        self.shift.iter().all(|v| v.abs() <= SHIFT_MATCH_TOL)
    }

    /// Value at a point `x` laid out like the shift vector.
    pub fn value(&self, x: &[f64]) -> f64 {
        (-self.exponent_at(x)).exp()
    }

    /// `(x - s)ᵀ (A ⊗ I₃) (x - s)` evaluated as `|Lᵀ (x - s)|²`.
    pub(crate) fn exponent_at(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        for c in 0..3 {
            for k in 0..n {
                let mut y = 0.0;
                for j in k..n {
                    y += self.chol[(j, k)] * (x[3 * j + c] - self.shift[3 * j + c]);
                }
                total += y * y;
            }
        }
        total
    }

    fn mirrors(&self, other: &FloatingEcg) -> bool {
        self.dim() == other.dim()
            && self
                .chol
                .iter()
                .zip(other.chol.iter())
                .all(|(a, b)| (a - b).abs() <= SHIFT_MATCH_TOL)
            && self
                .shift
                .iter()
                .zip(other.shift.iter())
                .all(|(a, b)| (a + b).abs() <= SHIFT_MATCH_TOL)
    }
}

/// Image of `g` under inversion of all coordinates: same `L`, shift `-s`.
pub fn parity_partner(g: &FloatingEcg) -> FloatingEcg {
    FloatingEcg {
        chol: g.chol.clone(),
        shift: -&g.shift,
    }
}

/// Ordered list of Gaussians plus parity bookkeeping.
///
/// `pairing[i]` is the index of the inversion partner of member `i` (itself
/// for centred members). It is present exactly when the set is closed under
/// inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    members: Vec<FloatingEcg>,
    pairing: Option<Vec<usize>>,
}

impl BasisSet {
    pub fn new(members: Vec<FloatingEcg>) -> Result<Self> {
        let first = members.first().ok_or_else(|| domain("basis must not be empty"))?;
        let n = first.dim();
        if members.iter().any(|g| g.dim() != n) {
            return Err(domain("basis members have different dimensions"));
        }
        let pairing = detect_pairing(&members);
        Ok(BasisSet { members, pairing })
    }

    pub fn members(&self) -> &[FloatingEcg] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn parity_closed(&self) -> bool {
        self.pairing.is_some()
    }

    pub fn pairing(&self) -> Option<&[usize]> {
        self.pairing.as_deref()
    }

    pub fn into_members(self) -> Vec<FloatingEcg> {
        self.members
    }

    /// Mirror image of every member, in the same order.
    pub fn inverted(&self) -> BasisSet {
        BasisSet {
            members: self.members.iter().map(parity_partner).collect(),
            pairing: self.pairing.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BasisDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BasisDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// Greedy partner matching; `None` if some member has no mirror image.
fn detect_pairing(members: &[FloatingEcg]) -> Option<Vec<usize>> {
    let mut partner: Vec<Option<usize>> = vec![None; members.len()];
    for i in 0..members.len() {
        if partner[i].is_some() {
            continue;
        }
        if members[i].is_centred() {
            partner[i] = Some(i);
            continue;
        }
        let j = (i + 1..members.len())
            .find(|&j| partner[j].is_none() && members[i].mirrors(&members[j]))?;
        partner[i] = Some(j);
        partner[j] = Some(i);
    }
    partner.into_iter().collect()
}

/// Adds the missing inversion partners so the result is parity closed.
pub fn parity_close(basis: &BasisSet) -> BasisSet {
    if basis.parity_closed() {
        return basis.clone();
    }
    let mut members = basis.members.clone();
    let mut claimed = vec![false; members.len()];
    let originals = members.len();
    for i in 0..originals {
        if claimed[i] {
            continue;
        }
        claimed[i] = true;
        if members[i].is_centred() {
            continue;
        }
        let found = (i + 1..originals).find(|&j| !claimed[j] && members[i].mirrors(&members[j]));
        match found {
            Some(j) => claimed[j] = true,
            None => members.push(parity_partner(&members[i])),
        }
    }
    BasisSet::new(members).expect("closure of a valid basis is valid")
}

/// Initial placement of basis centres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Placement {
    /// Every shift zero; even-tempered widths.
    Origin,
    /// Half the members at the origin, half with every internal coordinate
    /// displaced to `(0, 0, separation)`.
    TwoCenter { separation: f64 },
    /// Log-uniform widths, small random correlation, shifts uniform in
    /// `[-scale, scale]`.
    Random { seed: u64, scale: f64 },
}

/// Even-tempered Cholesky diagonals spanning `[0.1, 10]`.
fn even_tempered(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![1.0];
    }
    (0..count)
        .map(|k| 0.1 * 100f64.powf(k as f64 / (count - 1) as f64))
        .collect()
}

pub fn seed_basis(spec: &InternalSpec, count: usize, placement: Placement) -> Result<BasisSet> {
    if count == 0 {
        return Err(domain("basis size must be at least 1"));
    }
    let n = spec.dim();
    let diagonal_member = |d: f64, shift: DVector<f64>| {
        FloatingEcg::new(DMatrix::identity(n, n) * d, shift)
    };
    let members = match placement {
        Placement::Origin => even_tempered(count)
            .into_iter()
            .map(|d| diagonal_member(d, DVector::zeros(3 * n)))
            .collect::<Result<Vec<_>>>()?,
        Placement::TwoCenter { separation } => {
            if !separation.is_finite() {
                return Err(domain("two-center separation must be finite"));
            }
            let near = count.div_ceil(2);
            let far = count - near;
            let mut displaced = DVector::zeros(3 * n);
            for j in 0..n {
                displaced[3 * j + 2] = separation;
            }
            let mut out = Vec::with_capacity(count);
            for d in even_tempered(near) {
                out.push(diagonal_member(d, DVector::zeros(3 * n))?);
            }
            if far > 0 {
                for d in even_tempered(far) {
                    out.push(diagonal_member(d, displaced.clone())?);
                }
            }
            out
        }
        Placement::Random { seed, scale } => {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(domain("random placement scale must be non-negative"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let mut chol = DMatrix::zeros(n, n);
                    for i in 0..n {
                        chol[(i, i)] = 10f64.powf(rng.random_range(-1.0..1.0));
                        for j in 0..i {
                            chol[(i, j)] = rng.random_range(-0.1..0.1);
                        }
                    }
                    let shift = DVector::from_fn(3 * n, |_, _| {
                        if scale > 0.0 {
                            rng.random_range(-scale..scale)
                        } else {
                            0.0
                        }
                    });
                    FloatingEcg::new(chol, shift)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    BasisSet::new(members)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberDoc {
    /// Row-major lower triangle of the Cholesky factor.
    #[serde(rename = "L")]
    chol: Vec<f64>,
    s: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct BasisDoc {
    members: Vec<MemberDoc>,
}

impl From<&BasisSet> for BasisDoc {
    fn from(basis: &BasisSet) -> Self {
        let members = basis
            .members
            .iter()
            .map(|g| {
                let n = g.dim();
                let mut chol = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    for j in 0..=i {
                        chol.push(g.chol[(i, j)]);
                    }
                }
                MemberDoc {
                    chol,
                    s: g.shift.iter().copied().collect(),
                }
            })
            .collect();
        BasisDoc { members }
    }
}

impl TryFrom<BasisDoc> for BasisSet {
    type Error = crate::Error;

    fn try_from(doc: BasisDoc) -> Result<Self> {
        let members = doc
            .members
            .into_iter()
            .map(|m| {
                let n = m.s.len() / 3;
                if m.s.len() != 3 * n || m.chol.len() != n * (n + 1) / 2 {
                    return Err(domain("inconsistent member sizes in basis document"));
                }
                let mut chol = DMatrix::zeros(n, n);
                let mut it = m.chol.into_iter();
                for i in 0..n {
                    for j in 0..=i {
                        chol[(i, j)] = it.next().expect("length checked");
                    }
                }
                FloatingEcg::new(chol, DVector::from_vec(m.s))
            })
            .collect::<Result<Vec<_>>>()?;
        BasisSet::new(members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{InternalSpec, Particle, ParticleSystem};
    use proptest::prelude::*;

    fn z_shift(z: f64) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.0, z])
    }

    fn hydrogen_spec() -> InternalSpec {
        InternalSpec::from_system(&ParticleSystem::hydrogen()).unwrap()
    }

    #[test]
    fn partner_of_centred_gaussian_is_itself() {
        let g = FloatingEcg::isotropic(1.3, DVector::zeros(3)).unwrap();
        let p = parity_partner(&g);
        assert_eq!(p.chol(), g.chol());
        assert!(p.shift().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn partner_of_hydrogen_centre() {
        let g = FloatingEcg::isotropic(0.7, z_shift(3.05)).unwrap();
        let p = parity_partner(&g);
        assert_eq!(p.shift_of(0), [0.0, 0.0, -3.05]);
        assert_eq!(parity_partner(&p), g);
    }

    #[test]
    fn rejects_invalid_factors() {
        let upper = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(FloatingEcg::new(upper, DVector::zeros(6)).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.0]);
        assert!(FloatingEcg::new(singular, DVector::zeros(6)).is_err());
        assert!(FloatingEcg::new(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
    }

    #[test]
    fn negative_diagonal_is_canonicalized() {
        let l = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.4, 2.0]);
        let g = FloatingEcg::new(l.clone(), DVector::zeros(6)).unwrap();
        assert!(g.chol()[(0, 0)] > 0.0);
        assert_eq!(g.correlation(), &l * l.transpose());
    }

    #[test]
    fn closure_cases() {
        let centred = BasisSet::new(
            (1..=4)
                .map(|k| FloatingEcg::isotropic(k as f64, DVector::zeros(3)).unwrap())
                .collect(),
        )
        .unwrap();
        assert!(centred.parity_closed());
        assert_eq!(parity_close(&centred), centred);

        let single = BasisSet::new(vec![FloatingEcg::isotropic(1.0, z_shift(0.5)).unwrap()]).unwrap();
        assert!(!single.parity_closed());
        let closed = parity_close(&single);
        assert_eq!(closed.len(), 2);
        assert!(closed.parity_closed());
        assert_eq!(closed.pairing().unwrap(), &[1, 0]);
        assert_eq!(parity_close(&closed), closed);
    }

    #[test]
    fn seeding_placements() {
        let spec = hydrogen_spec();
        let origin = seed_basis(&spec, 4, Placement::Origin).unwrap();
        assert!(origin.parity_closed());
        assert!(origin.members().iter().all(|g| g.is_centred()));

        let two = seed_basis(&spec, 6, Placement::TwoCenter { separation: 3.0 }).unwrap();
        let near = two.members().iter().filter(|g| g.is_centred()).count();
        assert_eq!(near, 3);
        assert!(two.members()[3..].iter().all(|g| g.shift_of(0) == [0.0, 0.0, 3.0]));
        assert!(!two.parity_closed());

        let a = seed_basis(&spec, 5, Placement::Random { seed: 1, scale: 1.0 }).unwrap();
        let b = seed_basis(&spec, 5, Placement::Random { seed: 1, scale: 1.0 }).unwrap();
        assert_eq!(a, b);

        assert!(seed_basis(&spec, 0, Placement::Origin).is_err());
    }

    #[test]
    fn seeded_diagonals_within_range() {
        let sys = ParticleSystem::new(vec![
            Particle::new("A", 10.0, 1.0),
            Particle::new("B", 1.0, 1.0),
            Particle::new("e", 1.0, -2.0),
        ])
        .unwrap();
        let spec = InternalSpec::from_system(&sys).unwrap();
        for placement in [
            Placement::Origin,
            Placement::TwoCenter { separation: 2.0 },
            Placement::Random { seed: 9, scale: 2.0 },
        ] {
            let basis = seed_basis(&spec, 7, placement).unwrap();
            for g in basis.members() {
                for i in 0..2 {
                    let d = g.chol()[(i, i)];
                    assert!((0.1 - 1e-12..=10.0 + 1e-12).contains(&d), "{d}");
                }
            }
        }
    }

    fn arb_member(n: usize) -> impl Strategy<Value = FloatingEcg> {
        (
            proptest::collection::vec(0.1f64..4.0, n),
            proptest::collection::vec(-1.0f64..1.0, n * n),
            proptest::collection::vec(-3.0f64..3.0, 3 * n),
        )
            .prop_map(move |(diag, off, s)| {
                let chol = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
                    std::cmp::Ordering::Equal => diag[i],
                    std::cmp::Ordering::Greater => off[i * n + j],
                    std::cmp::Ordering::Less => 0.0,
                });
                FloatingEcg::new(chol, DVector::from_vec(s)).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn cholesky_parametrization_is_positive_definite(g in (1usize..=3).prop_flat_map(arb_member)) {
            let eig = g.correlation().symmetric_eigenvalues();
            prop_assert!(eig.min() > 0.0);
        }
    }

    proptest! {
        #[test]
        fn closure_idempotent_and_order_independent(
            members in proptest::collection::vec(arb_member(2), 1..6),
            rotate in 0usize..6,
        ) {
            let basis = BasisSet::new(members.clone()).unwrap();
            let closed = parity_close(&basis);
            prop_assert!(closed.parity_closed());
            prop_assert!(closed.len() <= 2 * basis.len());
            prop_assert_eq!(&parity_close(&closed), &closed);

            let mut rotated = members;
            let k = rotate % rotated.len();
            rotated.rotate_left(k);
            let other = parity_close(&BasisSet::new(rotated).unwrap());
            prop_assert_eq!(other.len(), closed.len());
            for g in other.members() {
                prop_assert!(closed.members().contains(g));
            }
        }

        #[test]
        fn json_round_trip_is_bit_exact(members in proptest::collection::vec(arb_member(2), 1..4)) {
            let basis = BasisSet::new(members).unwrap();
            let back = BasisSet::from_json(&basis.to_json().unwrap()).unwrap();
            for (a, b) in basis.members().iter().zip(back.members()) {
                for (x, y) in a.chol().iter().zip(b.chol().iter()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in a.shift().iter().zip(b.shift().iter()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
