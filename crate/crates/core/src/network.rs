//! Multiport network parameters and the three equivalent channel models.
//!
//! The link is an `L = N + M + K` port network: transmitter ports first, then
//! the surface ports, then the receiver ports. Impedance (`Z`) and scattering
//! (`S`) descriptions are stored as nine blocks following that partition.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::architecture::{RisArchitecture, TunableImpedance};
use crate::error::{Error, Result};
use crate::linalg::{
    cayley, ensure_finite, fro_norm, identity, serde_complex, serde_matrix, ComplexMatrix, ComplexVector,
    LuFactor, DEFAULT_RCOND_THRESHOLD,
};

/// Reference impedance used when none is given, in ohms.
pub const DEFAULT_Z0: f64 = 50.0;

/// Absolute band used when checking exact-zero idealizations on matrix norms.
pub const DEFAULT_STRUCTURE_TOLERANCE: f64 = 1e-9;

/// Smallest admissible distance between an eigenvalue of Θ and +1.
pub const DEFAULT_THETA_IDENTITY_DISTANCE: f64 = 1e-6;

/// One side of the port partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Tx,
    Ris,
    Rx,
}

impl Part {
    const ALL: [Part; 3] = [Part::Tx, Part::Ris, Part::Rx];

    fn index(self) -> usize {
        match self {
            Part::Tx => 0,
            Part::Ris => 1,
            Part::Rx => 2,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Part::Tx => "T",
            Part::Ris => "I",
            Part::Rx => "R",
        }
    }
}

/// Port counts `(N, M, K)` of transmitter, surface and receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortCounts {
    pub n: usize,
    pub m: usize,
    pub k: usize,
}

impl PortCounts {
    pub fn new(n: usize, m: usize, k: usize) -> Self {
        PortCounts { n, m, k }
    }

    pub fn total(&self) -> usize {
        self.n + self.m + self.k
    }

    pub fn size(&self, part: Part) -> usize {
        match part {
            Part::Tx => self.n,
            Part::Ris => self.m,
            Part::Rx => self.k,
        }
    }

    pub fn offset(&self, part: Part) -> usize {
        match part {
            Part::Tx => 0,
            Part::Ris => self.n,
            Part::Rx => self.n + self.m,
        }
    }
}

/// An `L×L` matrix stored as its nine partition blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    counts: PortCounts,
    blocks: [[ComplexMatrix; 3]; 3],
}

impl BlockMatrix {
    pub fn zeros(counts: PortCounts) -> Self {
        let blocks = Part::ALL.map(|r| Part::ALL.map(|c| ComplexMatrix::zeros(counts.size(r), counts.size(c))));
        BlockMatrix { counts, blocks }
    }

    pub fn from_full(full: &ComplexMatrix, counts: PortCounts) -> Result<Self> {
        let l = counts.total();
        if full.nrows() != l || full.ncols() != l {
            return Err(Error::DimensionMismatch(format!(
                "expected {l}x{l} matrix for partition {counts:?}, found {}x{}",
                full.nrows(),
                full.ncols()
            )));
        }
        ensure_finite(full)?;
        let blocks = Part::ALL.map(|r| {
            Part::ALL.map(|c| {
                full.view((counts.offset(r), counts.offset(c)), (counts.size(r), counts.size(c)))
                    .into_owned()
            })
        });
        Ok(BlockMatrix { counts, blocks })
    }

    pub fn counts(&self) -> PortCounts {
        self.counts
    }

    pub fn block(&self, row: Part, col: Part) -> &ComplexMatrix {
        &self.blocks[row.index()][col.index()]
    }

    /// Replaces one block, checking its shape against the partition.
    pub fn set_block(&mut self, row: Part, col: Part, value: ComplexMatrix) -> Result<()> {
        let want = (self.counts.size(row), self.counts.size(col));
        if value.shape() != want {
            return Err(Error::DimensionMismatch(format!(
                "block {}{} must be {}x{}, found {}x{}",
                row.label(),
                col.label(),
                want.0,
                want.1,
                value.nrows(),
                value.ncols()
            )));
        }
        ensure_finite(&value)?;
        self.blocks[row.index()][col.index()] = value;
        Ok(())
    }

    pub fn assemble(&self) -> ComplexMatrix {
        let l = self.counts.total();
        let mut full = ComplexMatrix::zeros(l, l);
        for r in Part::ALL {
            for c in Part::ALL {
                full.view_mut(
                    (self.counts.offset(r), self.counts.offset(c)),
                    (self.counts.size(r), self.counts.size(c)),
                )
                .copy_from(self.block(r, c));
            }
        }
        full
    }
}

/// Impedance parameters of the full link, in ohms, with their reference impedance.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpedanceParams {
    pub z: BlockMatrix,
    pub z0: f64,
}

/// Scattering parameters of the full link at reference impedance `z0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatteringParams {
    pub s: BlockMatrix,
    pub z0: f64,
}

fn check_z0(z0: f64) -> Result<()> {
    if z0.is_finite() && z0 > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("reference impedance must be positive, got {z0}")))
    }
}

impl ImpedanceParams {
    pub fn new(z: BlockMatrix, z0: f64) -> Result<Self> {
        check_z0(z0)?;
        Ok(ImpedanceParams { z, z0 })
    }

    pub fn block(&self, row: Part, col: Part) -> &ComplexMatrix {
        self.z.block(row, col)
    }

    /// Checks `Z_II = Z_IIᵀ` within `tolerance` (absolute, Frobenius norm).
    pub fn check_reciprocal(&self, tolerance: f64) -> Result<()> {
        let zii = self.block(Part::Ris, Part::Ris);
        let norm = fro_norm(&(zii - zii.transpose()));
        if norm > tolerance {
            return Err(Error::AssumptionViolation {
                block: "Z_II - Z_II^T",
                norm,
                tolerance,
            });
        }
        Ok(())
    }
}

impl ScatteringParams {
    pub fn block(&self, row: Part, col: Part) -> &ComplexMatrix {
        self.s.block(row, col)
    }
}

/// `(Z + Z0·I)⁻¹(Z − Z0·I)` for a termination impedance matrix.
pub fn reflection_matrix(z_term: &ComplexMatrix, z0: f64) -> Result<ComplexMatrix> {
    check_z0(z0)?;
    if !z_term.is_square() {
        return Err(Error::DimensionMismatch("termination impedance must be square".into()));
    }
    cayley(z_term, z0, DEFAULT_RCOND_THRESHOLD)
}

/// Reflection matrix Θ of a tunable impedance network.
///
/// Each group block is converted on its own, so Θ carries exactly the same
/// block-diagonal sparsity as `Z_I`.
pub fn theta_from_impedance(z_i: &TunableImpedance, z0: f64) -> Result<ComplexMatrix> {
    check_z0(z0)?;
    let arch = z_i.architecture();
    let blocks = (0..arch.groups())
        .map(|g| cayley(&z_i.block_matrix(g), z0, DEFAULT_RCOND_THRESHOLD))
        .collect::<Result<Vec<_>>>()?;
    crate::architecture::assemble_block_diagonal(&blocks)
}

/// Inverse of [`theta_from_impedance`]: `Z_I = Z0·(I + Θ)(I − Θ)⁻¹`.
///
/// Real parts of the result are dropped and only the in-group lower triangle
/// is kept; off-group entries above the structure tolerance are an error.
pub fn impedance_from_theta(theta: &ComplexMatrix, arch: RisArchitecture, z0: f64) -> Result<TunableImpedance> {
    check_z0(z0)?;
    let m = arch.elements();
    if theta.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "theta is {}x{}, architecture has {m} elements",
            theta.nrows(),
            theta.ncols()
        )));
    }
    ensure_finite(theta)?;
    let eye = identity(m);
    let gap = &eye - theta;
    // Θ unitary makes I − Θ normal, so its singular values are |1 − λ_i|.
    let distance = gap
        .clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if distance < DEFAULT_THETA_IDENTITY_DISTANCE {
        return Err(Error::ThetaNearIdentity { distance });
    }
    let lu = LuFactor::new(&gap, DEFAULT_RCOND_THRESHOLD)?;
    let z = lu.solve_right(&((&eye + theta) * Complex64::new(z0, 0.0)));
    let scale = fro_norm(&z).max(z0);
    for i in 0..m {
        for j in 0..m {
            if arch.group_of(i) != arch.group_of(j) && z[(i, j)].norm() > DEFAULT_STRUCTURE_TOLERANCE * scale {
                return Err(Error::AssumptionViolation {
                    block: "off-group entry of Z_I",
                    norm: z[(i, j)].norm(),
                    tolerance: DEFAULT_STRUCTURE_TOLERANCE * scale,
                });
            }
        }
    }
    TunableImpedance::from_matrix_imag(arch, &z)
}

/// Full `S = (Z + Z0·I)⁻¹(Z − Z0·I)` conversion, re-partitioned.
pub fn s_from_z(z: &ImpedanceParams) -> Result<ScatteringParams> {
    let full = cayley(&z.z.assemble(), z.z0, DEFAULT_RCOND_THRESHOLD)?;
    Ok(ScatteringParams {
        s: BlockMatrix::from_full(&full, z.z.counts())?,
        z0: z.z0,
    })
}

/// Block-wise conversion valid under the matched, unilateral structure:
/// `Z_TI = Z_TR = Z_IR = 0`, `Z_TT = Z0·I`, `Z_RR = Z0·I`.
pub fn s_blocks_from_z_blocks(z: &ImpedanceParams, tolerance: f64) -> Result<ScatteringParams> {
    let counts = z.z.counts();
    let z0 = z.z0;
    let must_vanish = [
        ("Z_TI", z.block(Part::Tx, Part::Ris).clone()),
        ("Z_TR", z.block(Part::Tx, Part::Rx).clone()),
        ("Z_IR", z.block(Part::Ris, Part::Rx).clone()),
        ("Z_TT - Z0*I", z.block(Part::Tx, Part::Tx) - identity(counts.n) * Complex64::new(z0, 0.0)),
        ("Z_RR - Z0*I", z.block(Part::Rx, Part::Rx) - identity(counts.k) * Complex64::new(z0, 0.0)),
    ];
    for (block, m) in must_vanish {
        let norm = fro_norm(&m);
        if norm > tolerance {
            return Err(Error::AssumptionViolation { block, norm, tolerance });
        }
    }
    let zii = z.block(Part::Ris, Part::Ris);
    let zri = z.block(Part::Rx, Part::Ris);
    let zit = z.block(Part::Ris, Part::Tx);
    let zrt = z.block(Part::Rx, Part::Tx);
    let eye = identity(counts.m);
    let z0c = Complex64::new(z0, 0.0);
    let lu = LuFactor::new(&(zii + &eye * z0c), DEFAULT_RCOND_THRESHOLD)?;
    let s_ii = lu.solve(&(zii - &eye * z0c));
    let s_it = lu.solve(zit);
    let half = Complex64::new(1.0 / (2.0 * z0), 0.0);
    let s_ri = zri * half * (&eye - &s_ii);
    let s_rt = zrt * half - zri * half * &s_it;

    let mut s = BlockMatrix::zeros(counts);
    s.set_block(Part::Ris, Part::Ris, s_ii)?;
    s.set_block(Part::Ris, Part::Tx, s_it)?;
    s.set_block(Part::Rx, Part::Ris, s_ri)?;
    s.set_block(Part::Rx, Part::Tx, s_rt)?;
    Ok(ScatteringParams { s, z0 })
}

/// General channel `H = (Γ_R + I)⁻¹ T_RT (I + Γ_T T_TT + T_TT)⁻¹` with
/// `T = S(I − ΓS)⁻¹` and `Γ = blkdiag(Γ_T, Θ, Γ_R)`.
pub fn channel_general(
    s: &ScatteringParams,
    gamma_t: &ComplexMatrix,
    theta: &ComplexMatrix,
    gamma_r: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let counts = s.s.counts();
    let (n, m, k) = (counts.n, counts.m, counts.k);
    if gamma_t.shape() != (n, n) || theta.shape() != (m, m) || gamma_r.shape() != (k, k) {
        return Err(Error::DimensionMismatch(format!(
            "reflection blocks {:?}, {:?}, {:?} do not match partition {counts:?}",
            gamma_t.shape(),
            theta.shape(),
            gamma_r.shape()
        )));
    }
    let l = counts.total();
    let s_full = s.s.assemble();
    let mut gamma = ComplexMatrix::zeros(l, l);
    gamma.view_mut((0, 0), (n, n)).copy_from(gamma_t);
    gamma.view_mut((n, n), (m, m)).copy_from(theta);
    gamma.view_mut((n + m, n + m), (k, k)).copy_from(gamma_r);

    let lu = LuFactor::new(&(identity(l) - &gamma * &s_full), DEFAULT_RCOND_THRESHOLD)?;
    let t = lu.solve_right(&s_full);
    let t_tt = t.view((0, 0), (n, n)).into_owned();
    let t_rt = t.view((n + m, 0), (k, n)).into_owned();

    let left = LuFactor::new(&(gamma_r + identity(k)), DEFAULT_RCOND_THRESHOLD)?;
    let right = LuFactor::new(&(identity(n) + gamma_t * &t_tt + &t_tt), DEFAULT_RCOND_THRESHOLD)?;
    Ok(right.solve_right(&left.solve(&t_rt)))
}

/// Simplified scattering channel `H = S_RT + S_RI (I − Θ S_II)⁻¹ Θ S_IT`.
pub fn channel_scattering(s: &ScatteringParams, theta: &ComplexMatrix) -> Result<ComplexMatrix> {
    let m = s.s.counts().m;
    if theta.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!("theta must be {m}x{m}")));
    }
    let s_ii = s.block(Part::Ris, Part::Ris);
    let lu = LuFactor::new(&(identity(m) - theta * s_ii), DEFAULT_RCOND_THRESHOLD)?;
    let inner = lu.solve(&(theta * s.block(Part::Ris, Part::Tx)));
    Ok(s.block(Part::Rx, Part::Tx) + s.block(Part::Rx, Part::Ris) * inner)
}

/// Impedance channel `H = (Z_RT − Z_RI (Z_II + Z_I)⁻¹ Z_IT) / (2·Z0)`.
pub fn channel_impedance(z: &ImpedanceParams, z_i: &ComplexMatrix) -> Result<ComplexMatrix> {
    let m = z.z.counts().m;
    if z_i.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!("Z_I must be {m}x{m}")));
    }
    let lu = LuFactor::new(&(z.block(Part::Ris, Part::Ris) + z_i), DEFAULT_RCOND_THRESHOLD)?;
    let inner = lu.solve(z.block(Part::Ris, Part::Tx));
    let h = z.block(Part::Rx, Part::Tx) - z.block(Part::Rx, Part::Ris) * inner;
    Ok(h * Complex64::new(1.0 / (2.0 * z.z0), 0.0))
}

/// Scalar channel blocks of a single-antenna link, in ohms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelTerms {
    #[serde(with = "serde_complex")]
    pub z_rt: Complex64,
    /// Surface-to-receiver row `z_RI` (length M).
    #[serde(with = "serde_vector")]
    pub z_ri: ComplexVector,
    #[serde(with = "serde_matrix")]
    pub z_ii: ComplexMatrix,
    /// Transmitter-to-surface column `z_IT` (length M).
    #[serde(with = "serde_vector")]
    pub z_it: ComplexVector,
    pub z0: f64,
}

impl ChannelTerms {
    /// Validates shapes, reciprocity of `Z_II` (absolute `tolerance`) and
    /// positive radiation resistance on its diagonal.
    pub fn new(
        z_rt: Complex64,
        z_ri: ComplexVector,
        z_ii: ComplexMatrix,
        z_it: ComplexVector,
        z0: f64,
        tolerance: f64,
    ) -> Result<Self> {
        let terms = ChannelTerms {
            z_rt,
            z_ri,
            z_ii,
            z_it,
            z0,
        };
        terms.validate(tolerance)?;
        Ok(terms)
    }

    pub fn validate(&self, tolerance: f64) -> Result<()> {
        check_z0(self.z0)?;
        let m = self.elements();
        if self.z_ii.shape() != (m, m) || self.z_it.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "z_RI has {m} entries but Z_II is {}x{} and z_IT has {}",
                self.z_ii.nrows(),
                self.z_ii.ncols(),
                self.z_it.len()
            )));
        }
        if !self.z_rt.re.is_finite() || !self.z_rt.im.is_finite() {
            return Err(Error::NonFinite { row: 0, col: 0 });
        }
        ensure_finite(&self.z_ii)?;
        ensure_finite(&DMatrix::from_column_slice(m, 1, self.z_ri.as_slice()))?;
        ensure_finite(&DMatrix::from_column_slice(m, 1, self.z_it.as_slice()))?;
        let asym = fro_norm(&(&self.z_ii - self.z_ii.transpose()));
        if asym > tolerance {
            return Err(Error::AssumptionViolation {
                block: "Z_II - Z_II^T",
                norm: asym,
                tolerance,
            });
        }
        if let Some(i) = (0..m).find(|&i| !(self.z_ii[(i, i)].re > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "self impedance of element {i} has non-positive real part {}",
                self.z_ii[(i, i)].re
            )));
        }
        Ok(())
    }

    pub fn elements(&self) -> usize {
        self.z_ri.len()
    }

    /// Assembles the SISO impedance network with matched, uncoupled end antennas.
    pub fn to_impedance_params(&self) -> ImpedanceParams {
        let m = self.elements();
        let z0c = Complex64::new(self.z0, 0.0);
        let mut z = BlockMatrix::zeros(PortCounts::new(1, m, 1));
        let set = |z: &mut BlockMatrix, r, c, v| z.set_block(r, c, v).expect("shapes follow the partition");
        set(&mut z, Part::Tx, Part::Tx, ComplexMatrix::from_element(1, 1, z0c));
        set(&mut z, Part::Rx, Part::Rx, ComplexMatrix::from_element(1, 1, z0c));
        set(&mut z, Part::Rx, Part::Tx, ComplexMatrix::from_element(1, 1, self.z_rt));
        set(&mut z, Part::Ris, Part::Ris, self.z_ii.clone());
        set(&mut z, Part::Rx, Part::Ris, DMatrix::from_row_slice(1, m, self.z_ri.as_slice()));
        set(&mut z, Part::Ris, Part::Tx, DMatrix::from_column_slice(m, 1, self.z_it.as_slice()));
        ImpedanceParams { z, z0: self.z0 }
    }

    /// Unscaled objective `z_RT − z_RI (Z_II + Z_I)⁻¹ z_IT` for a dense `Z_I`.
    pub fn objective_for_matrix(&self, z_i: &ComplexMatrix) -> Result<Complex64> {
        let m = self.elements();
        if z_i.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!("Z_I must be {m}x{m}")));
        }
        let lu = LuFactor::new(&(&self.z_ii + z_i), DEFAULT_RCOND_THRESHOLD)?;
        let c = lu.solve_vector(&self.z_it);
        Ok(self.z_rt - self.z_ri.dot(&c))
    }

    pub fn objective(&self, z_i: &TunableImpedance) -> Result<Complex64> {
        self.objective_for_matrix(&z_i.to_matrix())
    }

    /// Scalar end-to-end channel including the `1/(2·Z0)` factor.
    pub fn channel(&self, z_i: &TunableImpedance) -> Result<Complex64> {
        Ok(self.objective(z_i)? / (2.0 * self.z0))
    }
}

/// Channel gain `|z_RT − z_RI (Z_II + Z_I)⁻¹ z_IT|²` (the `1/(2·Z0)` factor is excluded).
pub fn channel_gain(terms: &ChannelTerms, z_i: &TunableImpedance) -> Result<f64> {
    Ok(terms.objective(z_i)?.norm_sqr())
}

/// Serde adapter writing a complex vector as a list of `[re, im]` pairs.
pub mod serde_vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &ComplexVector, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComplexVector, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        if pairs.iter().flatten().any(|x| !x.is_finite()) {
            return Err(serde::de::Error::custom("non-finite vector entry"));
        }
        Ok(ComplexVector::from_iterator(
            pairs.len(),
            pairs.iter().map(|p| Complex64::new(p[0], p[1])),
        ))
    }
}
