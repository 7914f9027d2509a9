mod common;

use bdris_core::architecture::{build_symmetry_map, expand_increment, validate_impedance};
use bdris_core::linalg::{symmetry_residual, unitarity_residual};
use bdris_core::network::{impedance_from_theta, theta_from_impedance};
use bdris_core::optimizer::solve_increment;
use bdris_core::RisArchitecture;
use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channel_models_agree(seed in any::<u64>(), size in 0..SIZES.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = SIZES[size];
        let terms = random_terms(&mut rng, m);
        let arch = random_architecture(&mut rng, m);
        let z_i = random_impedance(&mut rng, arch);
        let spread = model_spread(&terms, &z_i);
        prop_assert!(spread < 1e-10, "M={m} G={} spread {spread:e}", arch.groups());
    }

    #[test]
    fn lossless_design_reflects_unitarily_and_round_trips(seed in any::<u64>(), size in 0..SIZES.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = random_architecture(&mut rng, SIZES[size]);
        let z_i = random_impedance(&mut rng, arch);
        let theta = theta_from_impedance(&z_i, 50.0).unwrap();
        prop_assert!(unitarity_residual(&theta) < 1e-12);
        prop_assert!(symmetry_residual(&theta) < 1e-12);
        let back = impedance_from_theta(&theta, arch, 50.0).unwrap();
        for (a, b) in back.blocks().iter().flatten().zip(z_i.blocks().iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
        prop_assert!(validate_impedance(&z_i.to_matrix(), arch, 0.0).is_ok());
    }

    #[test]
    fn expanded_increments_are_symmetric_with_fixed_modulus(
        size in 1usize..=8,
        phases in proptest::collection::vec(-3.2f64..3.2, 37),
        a_phase in -3.2f64..3.2,
        delta in 1e-6f64..1e-1,
    ) {
        let p = build_symmetry_map(size);
        let row: Vec<Complex64> = (0..p.cols()).map(|k| Complex64::from_polar(1.0 + k as f64, phases[k])).collect();
        let omega = solve_increment(Complex64::from_polar(2.0, a_phase), &[row], delta);
        prop_assert!(omega.modulus_error() <= 4.0 * f64::EPSILON * delta);
        let block = expand_increment(&omega.groups[0], &p).unwrap();
        prop_assert_eq!(&block, &block.transpose());
        prop_assert!(block.iter().all(|w| (w.norm() - delta).abs() <= 4.0 * f64::EPSILON * delta));
    }
}

#[test]
fn symmetry_map_matches_formula_exhaustively() {
    for size in 1..=8 {
        let p = build_symmetry_map(size);
        assert_eq!((p.rows(), p.cols()), (size * size, size * (size + 1) / 2));
        for col in 0..size {
            for row in 0..size {
                let vec_pos = size * col + row;
                for k in 0..p.cols() {
                    assert_eq!(p.entry(vec_pos, k), u8::from(k == packed_column(row, col)), "size {size} ({row},{col}) k {k}");
                }
            }
        }
    }
}

#[test]
fn architecture_divisibility_is_enforced() {
    assert!(RisArchitecture::new(16, 3).is_err());
    assert!(RisArchitecture::new(16, 0).is_err());
    assert_eq!(RisArchitecture::new(16, 4).unwrap().group_size(), 4);
}
