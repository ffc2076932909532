use ecg_field::ecg::{parity_close, seed_basis, Placement};
use ecg_field::field_lab::{fixed_basis_point, hf_residual, polyfit, run_sweep, SweepOptions};
use ecg_field::system::{InternalSpec, ParticleSystem};
use ecg_field::variational::{OptimizeOptions, DEFAULT_LIN_DEP_TOL};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn hydrogen() -> InternalSpec {
    InternalSpec::from_system(&ParticleSystem::hydrogen()).unwrap()
}

/// Least squares through the normal equations, kept apart from the library's SVD path.
fn normal_equations(xs: &[f64], ys: &[f64], powers: &[u32]) -> Vec<f64> {
    let a = DMatrix::from_fn(xs.len(), powers.len(), |i, j| xs[i].powi(powers[j] as i32));
    let ata = a.transpose() * &a;
    let aty = a.transpose() * DVector::from_column_slice(ys);
    ata.lu().solve(&aty).unwrap().iter().copied().collect()
}

fn symmetric_grid() -> impl Strategy<Value = Vec<f64>> {
    (proptest::collection::btree_set(1u32..50, 2..5), any::<bool>()).prop_map(|(steps, with_zero)| {
        let mut xs: Vec<f64> = steps.iter().flat_map(|s| [*s as f64 * 1e-4, -(*s as f64) * 1e-4]).collect();
        if with_zero {
            xs.push(0.0);
        }
        xs
    })
}

proptest! {
    #[test]
    fn even_data_on_a_symmetric_grid_has_no_linear_term(
        xs in symmetric_grid(),
        c0 in -1.0f64..0.0,
        c2 in -10.0f64..0.0,
        c4 in -100.0f64..0.0,
    ) {
        let ys: Vec<f64> = xs.iter().map(|x| c0 + c2 * x * x + c4 * x.powi(4)).collect();
        let fit = polyfit(&xs, &ys, &[0, 1, 2]).unwrap();
        prop_assert_eq!(fit.coeff(1).unwrap(), 0.0);
    }

    #[test]
    fn fit_matches_normal_equations(
        xs in proptest::collection::btree_set(-20i32..20, 4..8),
        coeffs in proptest::collection::vec(-2.0f64..2.0, 3),
        noise in proptest::collection::vec(-1e-3f64..1e-3, 8),
    ) {
        let xs: Vec<f64> = xs.iter().map(|x| *x as f64 * 0.05).collect();
        let ys: Vec<f64> = xs
            .iter()
            .zip(&noise)
            .map(|(x, n)| coeffs[0] + coeffs[1] * x + coeffs[2] * x * x + n)
            .collect();
        let fit = polyfit(&xs, &ys, &[0, 1, 2]).unwrap();
        let oracle = normal_equations(&xs, &ys, &[0, 1, 2]);
        for (c, o) in fit.coeffs.iter().zip(&oracle) {
            prop_assert!((c - o).abs() < 1e-8 * (1.0 + o.abs()), "{c} vs {o}");
        }
        prop_assert!(fit.residual_rms <= 1e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixed_closed_basis_sweep_is_mirror_symmetric(seed in 0u64..1000, size in 2usize..5) {
        let spec = hydrogen();
        // Wide shifts give unbound bases whose even and odd states are near-degenerate and mix.
        let basis = parity_close(&seed_basis(&spec, size, Placement::Random { seed, scale: 0.3 }).unwrap());
        let fields = [-0.002, -0.001, 0.0, 0.001, 0.002];
        let opts = SweepOptions { reoptimize_per_field: false, optimize: OptimizeOptions::default(), fd_step: None };
        let r = run_sweep(&basis, &spec, &fields, &[0, 1, 2], &opts).unwrap();
        for i in 0..2 {
            let j = 4 - i;
            prop_assert!((r.energies[i] - r.energies[j]).abs() <= 1e-12 * r.energies[i].abs());
            prop_assert!((r.dipole_expectations[i] + r.dipole_expectations[j]).abs() < 1e-9);
        }
        prop_assert!(r.dipole.unwrap().dipole.abs() < 1e-8);
        prop_assert!(r.parity_diag.mz_at_zero.abs() < 1e-10);
        prop_assert!(r.parity_diag.parity_overlap.abs() <= 1.0 + 1e-9);
        prop_assert!(r.parity_diag.parity_overlap.abs() > 1.0 - 1e-6);
    }

    #[test]
    fn parity_overlap_is_bounded_for_any_basis(seed in 0u64..1000, size in 1usize..5) {
        let spec = hydrogen();
        let basis = seed_basis(&spec, size, Placement::Random { seed, scale: 1.0 }).unwrap();
        let opts = SweepOptions { reoptimize_per_field: false, optimize: OptimizeOptions::default(), fd_step: None };
        let r = run_sweep(&basis, &spec, &[0.0, 0.001], &[0, 1], &opts).unwrap();
        prop_assert!(r.parity_diag.parity_overlap.abs() <= 1.0 + 1e-9);
    }
}

#[test]
fn fixed_basis_residual_is_pure_truncation_error() {
    // For a fixed basis the central difference error scales as h².
    let spec = hydrogen();
    let basis = parity_close(&seed_basis(&spec, 4, Placement::Random { seed: 7, scale: 0.5 }).unwrap());
    let residual = |h: f64| {
        hf_residual(|e| fixed_basis_point(&basis, &spec, e, DEFAULT_LIN_DEP_TOL), 0.02, h).unwrap()
    };
    let (coarse, fine) = (residual(1e-2), residual(5e-3));
    let order = (coarse / fine).log2();
    assert!((order - 2.0).abs() < 0.1, "observed order {order} from {coarse:e} and {fine:e}");
    assert!(residual(1e-4) < 1e-7);
}

#[test]
fn csv_cells_round_trip_exactly() {
    let spec = hydrogen();
    let basis = seed_basis(&spec, 4, Placement::Origin).unwrap();
    let opts = SweepOptions { reoptimize_per_field: false, optimize: OptimizeOptions::default(), fd_step: Some(1e-4) };
    let r = run_sweep(&basis, &spec, &[-0.001, 0.0, 0.001], &[0, 2], &opts).unwrap();
    let csv = r.to_csv();
    for (i, line) in csv.lines().skip(1).enumerate() {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells[0].to_bits(), r.fields[i].to_bits());
        assert_eq!(cells[1].to_bits(), r.energies[i].to_bits());
        assert_eq!(cells[2].to_bits(), r.dipole_expectations[i].to_bits());
        assert_eq!(cells[3].to_bits(), r.hf_residuals[i].unwrap().to_bits());
    }
}
