#![allow(dead_code)]

use bdris_core::linalg::{c, ComplexMatrix, ComplexVector};
use bdris_core::network::{
    channel_general, channel_impedance, channel_scattering, s_blocks_from_z_blocks, s_from_z, theta_from_impedance,
    DEFAULT_STRUCTURE_TOLERANCE,
};
use bdris_core::{ChannelTerms, RisArchitecture, TunableImpedance};
use rand::Rng;

pub const SIZES: [usize; 5] = [1, 2, 4, 8, 16];

/// Random reciprocal surface with strictly passive self terms, scaled like a 50 Ω system.
pub fn random_terms<R: Rng>(rng: &mut R, m: usize) -> ChannelTerms {
    let mut z_ii = ComplexMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = if i == j {
                c(rng.random_range(5.0..80.0), rng.random_range(-60.0..60.0))
            } else {
                c(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0))
            };
            z_ii[(i, j)] = v;
            z_ii[(j, i)] = v;
        }
    }
    let vec = |rng: &mut R| ComplexVector::from_fn(m, |_, _| c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
    let z_ri = vec(rng);
    let z_it = vec(rng);
    let z_rt = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    ChannelTerms::new(z_rt, z_ri, z_ii, z_it, 50.0, 1e-12).unwrap()
}

/// Random admissible architecture for `m` elements.
pub fn random_architecture<R: Rng>(rng: &mut R, m: usize) -> RisArchitecture {
    let divisors: Vec<usize> = (1..=m).filter(|g| m % g == 0).collect();
    RisArchitecture::new(m, divisors[rng.random_range(0..divisors.len())]).unwrap()
}

pub fn random_impedance<R: Rng>(rng: &mut R, arch: RisArchitecture) -> TunableImpedance {
    let blocks = (0..arch.groups())
        .map(|_| (0..arch.free_per_group()).map(|_| rng.random_range(-120.0..120.0)).collect())
        .collect();
    TunableImpedance::from_blocks(arch, blocks).unwrap()
}

/// The three channel models for one design: (general, scattering, impedance).
pub fn three_models(terms: &ChannelTerms, z_i: &TunableImpedance) -> [num_complex::Complex64; 3] {
    let z = terms.to_impedance_params();
    let theta = theta_from_impedance(z_i, z.z0).unwrap();
    let full_s = s_from_z(&z).unwrap();
    let zero = ComplexMatrix::zeros(1, 1);
    let general = channel_general(&full_s, &zero, &theta, &zero).unwrap();
    let s = s_blocks_from_z_blocks(&z, DEFAULT_STRUCTURE_TOLERANCE).unwrap();
    let scattering = channel_scattering(&s, &theta).unwrap();
    let impedance = channel_impedance(&z, &z_i.to_matrix()).unwrap();
    [general[(0, 0)], scattering[(0, 0)], impedance[(0, 0)]]
}

pub fn relative(a: num_complex::Complex64, b: num_complex::Complex64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

/// Worst pairwise relative disagreement of the three models.
pub fn model_spread(terms: &ChannelTerms, z_i: &TunableImpedance) -> f64 {
    let [g, s, z] = three_models(terms, z_i);
    relative(g, s).max(relative(g, z)).max(relative(s, z))
}

/// Packed column of entry `(row, col)` of a symmetric block, written from scratch.
pub fn packed_column(row: usize, col: usize) -> usize {
    let (i, j) = if row >= col { (row, col) } else { (col, row) };
    i * (i + 1) / 2 + j
}
