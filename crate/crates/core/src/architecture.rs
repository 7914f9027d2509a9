//! Surface circuit topologies and the constraint machinery around them.
//!
//! A surface of `M` elements is split into `G` groups of `M̄ = M/G` ports;
//! ports inside a group are interconnected by a lossless reciprocal
//! impedance network, ports in different groups are not. `G = M` is the
//! conventional single-connected surface and `G = 1` is fully connected.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::network::ChannelTerms;

/// Number of elements and groups of a surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureRepr", into = "ArchitectureRepr")]
pub struct RisArchitecture {
    elements: usize,
    groups: usize,
}

#[derive(Serialize, Deserialize)]
struct ArchitectureRepr {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "G")]
    g: usize,
}

impl TryFrom<ArchitectureRepr> for RisArchitecture {
    type Error = Error;
    fn try_from(r: ArchitectureRepr) -> Result<Self> {
        RisArchitecture::new(r.m, r.g)
    }
}

impl From<RisArchitecture> for ArchitectureRepr {
    fn from(a: RisArchitecture) -> Self {
        ArchitectureRepr {
            m: a.elements,
            g: a.groups,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    SingleConnected,
    GroupConnected,
    FullyConnected,
}

impl Topology {
    pub fn label(self) -> &'static str {
        match self {
            Topology::SingleConnected => "SC",
            Topology::GroupConnected => "GC",
            Topology::FullyConnected => "FC",
        }
    }
}

impl RisArchitecture {
    pub fn new(elements: usize, groups: usize) -> Result<Self> {
        if elements == 0 || groups == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "element count ({elements}) and group count ({groups}) must be positive"
            )));
        }
        if elements % groups != 0 {
            return Err(Error::InvalidArchitecture(format!(
                "{groups} groups do not divide {elements} elements"
            )));
        }
        Ok(RisArchitecture { elements, groups })
    }

    pub fn single_connected(elements: usize) -> Result<Self> {
        Self::new(elements, elements)
    }

    pub fn fully_connected(elements: usize) -> Result<Self> {
        Self::new(elements, 1)
    }

    /// Architecture with groups of `group_size` ports.
    pub fn with_group_size(elements: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || elements % group_size != 0 {
            return Err(Error::InvalidArchitecture(format!(
                "group size {group_size} does not divide {elements} elements"
            )));
        }
        Self::new(elements, elements / group_size)
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn group_size(&self) -> usize {
        self.elements / self.groups
    }

    pub fn group_of(&self, element: usize) -> usize {
        element / self.group_size()
    }

    /// Number of free reactances per group, `M̄(M̄+1)/2`.
    pub fn free_per_group(&self) -> usize {
        let s = self.group_size();
        s * (s + 1) / 2
    }

    pub fn topology(&self) -> Topology {
        if self.groups == self.elements {
            Topology::SingleConnected
        } else if self.groups == 1 {
            Topology::FullyConnected
        } else {
            Topology::GroupConnected
        }
    }
}

impl fmt::Display for RisArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (M = {}, G = {}, group size {})",
            self.topology().label(),
            self.elements,
            self.groups,
            self.group_size()
        )
    }
}

/// Index of entry `(row, col)` with `col ≤ row` in lower-triangular row-major order.
pub fn packed_index(row: usize, col: usize) -> usize {
    let (r, c) = if col <= row { (row, col) } else { (col, row) };
    r * (r + 1) / 2 + c
}

/// Block-diagonal, symmetric, purely imaginary tunable impedance matrix.
///
/// Only the reactances (imaginary parts) of the diagonal and lower triangle
/// of each group block are stored, so the lossless and reciprocal
/// constraints hold by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TunableImpedance {
    arch: RisArchitecture,
    blocks: Vec<Vec<f64>>,
}

impl TunableImpedance {
    pub fn zeros(arch: RisArchitecture) -> Self {
        TunableImpedance {
            arch,
            blocks: vec![vec![0.0; arch.free_per_group()]; arch.groups()],
        }
    }

    /// Diagonal network with the given per-element reactances (ohms).
    pub fn from_diagonal(arch: RisArchitecture, reactances: &[f64]) -> Result<Self> {
        if reactances.len() != arch.elements() {
            return Err(Error::DimensionMismatch(format!(
                "{} reactances for {} elements",
                reactances.len(),
                arch.elements()
            )));
        }
        let mut z = Self::zeros(arch);
        let s = arch.group_size();
        for (m, &x) in reactances.iter().enumerate() {
            let local = m % s;
            z.blocks[m / s][packed_index(local, local)] = x;
        }
        Ok(z)
    }

    /// Packed lower-triangular reactances for each group.
    pub fn from_blocks(arch: RisArchitecture, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.len() != arch.groups() || blocks.iter().any(|b| b.len() != arch.free_per_group()) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} blocks of {} reactances",
                arch.groups(),
                arch.free_per_group()
            )));
        }
        if blocks.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite reactance".into()));
        }
        Ok(TunableImpedance { arch, blocks })
    }

    /// Reads the in-group lower triangle's imaginary parts of a dense matrix.
    ///
    /// Real parts, the upper triangle and off-group entries are ignored; use
    /// [`TunableImpedance::from_matrix`] to validate them first.
    pub fn from_matrix_imag(arch: RisArchitecture, z: &ComplexMatrix) -> Result<Self> {
        let m = arch.elements();
        if z.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{}, architecture has {m} elements",
                z.nrows(),
                z.ncols()
            )));
        }
        let s = arch.group_size();
        let blocks = (0..arch.groups())
            .map(|g| {
                let base = g * s;
                let mut packed = Vec::with_capacity(arch.free_per_group());
                for i in 0..s {
                    for j in 0..=i {
                        packed.push(z[(base + i, base + j)].im);
                    }
                }
                packed
            })
            .collect();
        Self::from_blocks(arch, blocks)
    }

    /// Validates a dense matrix against the architecture, then stores it.
    pub fn from_matrix(arch: RisArchitecture, z: &ComplexMatrix, tolerance: f64) -> Result<Self> {
        validate_impedance(z, arch, tolerance).map_err(Error::InvalidImpedance)?;
        Self::from_matrix_imag(arch, z)
    }

    pub fn architecture(&self) -> RisArchitecture {
        self.arch
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn block_values(&self, group: usize) -> &[f64] {
        &self.blocks[group]
    }

    /// Adds `delta` ohms of reactance to packed entry `index` of group `group`.
    pub fn add_reactance(&mut self, group: usize, index: usize, delta: f64) {
        self.blocks[group][index] += delta;
    }

    /// Reactance of entry `(i, j)` of the full `M×M` matrix (zero off-group).
    pub fn reactance(&self, i: usize, j: usize) -> f64 {
        if self.arch.group_of(i) != self.arch.group_of(j) {
            return 0.0;
        }
        let s = self.arch.group_size();
        self.blocks[i / s][packed_index(i % s, j % s)]
    }

    pub fn block_matrix(&self, group: usize) -> ComplexMatrix {
        let s = self.arch.group_size();
        let packed = &self.blocks[group];
        ComplexMatrix::from_fn(s, s, |i, j| Complex64::new(0.0, packed[packed_index(i, j)]))
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        let m = self.arch.elements();
        let mut z = ComplexMatrix::zeros(m, m);
        self.add_to(&mut z);
        z
    }

    /// Adds `j·X` into `target` without materializing the off-group zeros.
    pub fn add_to(&self, target: &mut ComplexMatrix) {
        let s = self.arch.group_size();
        for (g, packed) in self.blocks.iter().enumerate() {
            let base = g * s;
            for i in 0..s {
                for j in 0..=i {
                    let v = Complex64::new(0.0, packed[packed_index(i, j)]);
                    target[(base + i, base + j)] += v;
                    if i != j {
                        target[(base + j, base + i)] += v;
                    }
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TunableRepr {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "G")]
    g: usize,
    blocks: Vec<Vec<f64>>,
}

impl Serialize for TunableImpedance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TunableRepr {
            m: self.arch.elements(),
            g: self.arch.groups(),
            blocks: self.blocks.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TunableImpedance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = TunableRepr::deserialize(d)?;
        let arch = RisArchitecture::new(repr.m, repr.g).map_err(serde::de::Error::custom)?;
        TunableImpedance::from_blocks(arch, repr.blocks).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// Nonzero entry coupling two different groups.
    OffGroup,
    /// Nonzero real part (lossy network).
    RealPart,
    /// `Z_{I,g} ≠ Z_{I,g}ᵀ` (non-reciprocal network).
    Asymmetric,
}

/// First entry of a candidate `Z_I` breaking the architecture constraints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpedanceViolation {
    pub row: usize,
    pub col: usize,
    pub kind: ViolationKind,
    pub magnitude: f64,
}

impl fmt::Display for ImpedanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::OffGroup => "off-group entry",
            ViolationKind::RealPart => "real part",
            ViolationKind::Asymmetric => "asymmetry",
        };
        write!(f, "{what} of magnitude {:.3e} at ({}, {})", self.magnitude, self.row, self.col)
    }
}

/// Default absolute tolerance of [`validate_impedance`].
pub const DEFAULT_VALIDATION_TOLERANCE: f64 = 1e-12;

/// Checks block-diagonal sparsity, per-block symmetry and zero real parts.
///
/// Entries are scanned in row-major order and the first violation is reported.
pub fn validate_impedance(
    z: &ComplexMatrix,
    arch: RisArchitecture,
    tolerance: f64,
) -> std::result::Result<(), ImpedanceViolation> {
    let m = arch.elements();
    assert_eq!(z.shape(), (m, m), "impedance matrix does not match the architecture");
    for row in 0..m {
        for col in 0..m {
            let v = z[(row, col)];
            let report = |kind, magnitude| ImpedanceViolation {
                row,
                col,
                kind,
                magnitude,
            };
            if arch.group_of(row) != arch.group_of(col) {
                if !(v.norm() <= tolerance) {
                    return Err(report(ViolationKind::OffGroup, v.norm()));
                }
                continue;
            }
            if !(v.re.abs() <= tolerance) {
                return Err(report(ViolationKind::RealPart, v.re.abs()));
            }
            let asym = (v - z[(col, row)]).norm();
            if !(asym <= tolerance) {
                return Err(report(ViolationKind::Asymmetric, asym));
            }
        }
    }
    Ok(())
}

/// Binary map `P` from packed lower-triangular entries to `vec(Ω)`.
///
/// `vec` is column-major: vec position `M̄·col + row` holds entry `(row, col)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymmetryMap {
    size: usize,
    /// For each vec position, the packed column holding its single 1.
    columns: Vec<usize>,
}

impl SymmetryMap {
    pub fn group_size(&self) -> usize {
        self.size
    }

    pub fn rows(&self) -> usize {
        self.size * self.size
    }

    pub fn cols(&self) -> usize {
        self.size * (self.size + 1) / 2
    }

    pub fn column_of(&self, row: usize) -> usize {
        self.columns[row]
    }

    pub fn entry(&self, row: usize, col: usize) -> u8 {
        u8::from(self.columns[row] == col)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<u8> {
        nalgebra::DMatrix::from_fn(self.rows(), self.cols(), |r, c| self.entry(r, c))
    }

    /// `P·ω`.
    pub fn apply(&self, omega: &[Complex64]) -> Result<Vec<Complex64>> {
        if omega.len() != self.cols() {
            return Err(Error::DimensionMismatch(format!(
                "packed vector has {} entries, map expects {}",
                omega.len(),
                self.cols()
            )));
        }
        Ok(self.columns.iter().map(|&k| omega[k]).collect())
    }

    /// Row vector product `e·P` for `e` of length `M̄²`.
    pub fn project_row(&self, e: &[Complex64]) -> Result<Vec<Complex64>> {
        if e.len() != self.rows() {
            return Err(Error::DimensionMismatch(format!(
                "row vector has {} entries, map expects {}",
                e.len(),
                self.rows()
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols()];
        for (r, &k) in self.columns.iter().enumerate() {
            out[k] += e[r];
        }
        Ok(out)
    }
}

fn symmetry_map_uncached(size: usize) -> SymmetryMap {
    let mut columns = vec![0; size * size];
    // 1-based indices as in the usual statement of the map.
    for m in 1..=size {
        for n in 1..=size {
            let k = if n <= m { m * (m - 1) / 2 + n } else { n * (n - 1) / 2 + m };
            columns[size * (m - 1) + n - 1] = k - 1;
        }
    }
    SymmetryMap { size, columns }
}

/// Builds (or fetches the memoized) symmetry map for groups of `size` ports.
pub fn build_symmetry_map(size: usize) -> Arc<SymmetryMap> {
    assert!(size >= 1, "group size must be positive");
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<SymmetryMap>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.read().expect("symmetry map cache poisoned").get(&size) {
        return Arc::clone(p);
    }
    let mut w = cache.write().expect("symmetry map cache poisoned");
    Arc::clone(w.entry(size).or_insert_with(|| Arc::new(symmetry_map_uncached(size))))
}

/// Per-group packed increments of constant modulus `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementVector {
    pub delta: f64,
    pub groups: Vec<Vec<Complex64>>,
}

impl IncrementVector {
    /// Largest deviation of any entry's modulus from `delta`.
    pub fn modulus_error(&self) -> f64 {
        self.groups
            .iter()
            .flatten()
            .map(|w| (w.norm() - self.delta).abs())
            .fold(0.0, f64::max)
    }
}

/// `Ω_g = unvec(P·ω_g)`.
pub fn expand_increment(omega: &[Complex64], p: &SymmetryMap) -> Result<ComplexMatrix> {
    let v = p.apply(omega)?;
    let s = p.group_size();
    Ok(ComplexMatrix::from_column_slice(s, s, &v))
}

/// `blkdiag(B_1, …, B_G)` for equally sized square blocks.
pub fn assemble_block_diagonal(blocks: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let Some(first) = blocks.first() else {
        return Err(Error::DimensionMismatch("no blocks to assemble".into()));
    };
    let s = first.nrows();
    if let Some(b) = blocks.iter().find(|b| b.shape() != (s, s)) {
        return Err(Error::DimensionMismatch(format!(
            "blocks must all be {s}x{s}, found {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let m = s * blocks.len();
    let mut out = ComplexMatrix::zeros(m, m);
    for (g, b) in blocks.iter().enumerate() {
        out.view_mut((g * s, g * s), (s, s)).copy_from(b);
    }
    Ok(out)
}

const INIT_GRID_POINTS: usize = 1024;
const INIT_PASSES: usize = 3;

/// Maximizes `|rest − q/(R + j(X + x))|` over the reactance `x`.
///
/// Uses the resonance angle `φ = atan((X + x)/R)` in `(−π/2, π/2)`, along which
/// the added term traces a circle through the origin: a grid scan locates the
/// peak and golden-section search refines it.
pub fn best_series_reactance(rest: Complex64, q: Complex64, resistance: f64, self_reactance: f64) -> f64 {
    let objective = |phi: f64| (rest - q / resistance * phi.cos() * Complex64::from_polar(1.0, -phi)).norm();
    let to_x = |phi: f64| resistance * phi.tan() - self_reactance;
    let step = std::f64::consts::PI / INIT_GRID_POINTS as f64;
    let grid = |i: usize| -FRAC_PI_2 + (i as f64 + 0.5) * step;

    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..INIT_GRID_POINTS {
        let v = objective(grid(i));
        let better = v > best_val || (v == best_val && to_x(grid(i)).abs() < to_x(grid(best)).abs());
        if better {
            best = i;
            best_val = v;
        }
    }
    let lo = if best == 0 { -FRAC_PI_2 + 1e-15 } else { grid(best - 1) };
    let hi = if best + 1 == INIT_GRID_POINTS { FRAC_PI_2 - 1e-15 } else { grid(best + 1) };
    let phi = golden_section_max(objective, lo, hi, 1e-14);
    let phi = if objective(phi) >= best_val { phi } else { grid(best) };
    to_x(phi)
}

/// Globally optimal reactances of the decoupled diagonal problem
/// `max |z_rt − Σ q_m/(Z_mm + j x_m)|`.
fn closed_form_diagonal(z_rt: Complex64, q: &[Complex64], diag: &[Complex64]) -> Vec<f64> {
    let pull: Complex64 = q.iter().zip(diag).map(|(q, z)| q / z.re).sum::<Complex64>() * 0.5;
    let target = z_rt - pull;
    let psi = if target.norm() > 0.0 { target.arg() } else { 0.0 };
    let limit = FRAC_PI_2 * (1.0 - 1e-12);
    q.iter()
        .zip(diag)
        .map(|(q, z)| {
            let beta = q.arg() + std::f64::consts::PI - psi;
            // 2φ ≡ β (mod 2π) with φ in (−π/2, π/2].
            let phi = (0.5 * beta.sin().atan2(beta.cos())).clamp(-limit, limit);
            z.re * phi.tan() - z.im
        })
        .collect()
}

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

/// Initial design: optimize a diagonal network while ignoring coupling.
///
/// Off-diagonal entries of `Z_II` are dropped. The decoupled diagonal problem
/// is solved in closed form: for a target phase `ψ` of the objective each
/// element's best resonance angle is `φ_m = (∠q_m + π − ψ)/2`, and the best
/// `ψ` is `∠(z_RT − ½Σ q_m/R_m)`. Three coordinate sweeps with
/// [`best_series_reactance`] then polish the result.
pub fn init_no_mc(terms: &ChannelTerms, arch: RisArchitecture) -> Result<TunableImpedance> {
    let m = terms.elements();
    if m != arch.elements() {
        return Err(Error::DimensionMismatch(format!(
            "scenario has {m} elements, architecture {}",
            arch.elements()
        )));
    }
    let diag: Vec<Complex64> = (0..m).map(|i| terms.z_ii[(i, i)]).collect();
    if let Some(i) = diag.iter().position(|z| !(z.re > 0.0)) {
        return Err(Error::InvalidGeometry(format!(
            "self impedance of element {i} has non-positive real part"
        )));
    }
    let q: Vec<Complex64> = (0..m).map(|i| terms.z_ri[i] * terms.z_it[i]).collect();
    let mut x = closed_form_diagonal(terms.z_rt, &q, &diag);
    let term = |i: usize, xi: f64| q[i] / (diag[i] + Complex64::new(0.0, xi));
    let value = |x: &[f64]| (terms.z_rt - (0..m).map(|k| term(k, x[k])).sum::<Complex64>()).norm();

    for _ in 0..INIT_PASSES {
        for i in 0..m {
            let rest = terms.z_rt - (0..m).filter(|&k| k != i).map(|k| term(k, x[k])).sum::<Complex64>();
            let before = x[i];
            let current = value(&x);
            x[i] = best_series_reactance(rest, q[i], diag[i].re, diag[i].im);
            // The 1-D search is only accurate to its tolerance; never step backwards.
            if value(&x) < current {
                x[i] = before;
            }
        }
    }
    TunableImpedance::from_diagonal(arch, &x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, fro_norm, ComplexVector};

    #[test]
    fn architecture_kinds() {
        let sc = RisArchitecture::new(16, 16).unwrap();
        assert_eq!(sc.topology(), Topology::SingleConnected);
        assert_eq!(sc.group_size(), 1);
        let gc = RisArchitecture::new(16, 4).unwrap();
        assert_eq!(gc.topology(), Topology::GroupConnected);
        assert_eq!(gc.group_size(), 4);
        assert_eq!(RisArchitecture::fully_connected(16).unwrap().topology(), Topology::FullyConnected);
        assert!(matches!(RisArchitecture::new(16, 3), Err(Error::InvalidArchitecture(_))));
        assert!(RisArchitecture::new(0, 1).is_err());
        assert_eq!(RisArchitecture::with_group_size(16, 4).unwrap(), gc);
        // One element is both single- and fully-connected; single wins.
        assert_eq!(RisArchitecture::new(1, 1).unwrap().topology(), Topology::SingleConnected);
    }

    #[test]
    fn validation_accepts_structured_matrices() {
        let sc = RisArchitecture::new(3, 3).unwrap();
        let d = TunableImpedance::from_diagonal(sc, &[1.0, -2.0, 3.0]).unwrap();
        assert!(validate_impedance(&d.to_matrix(), sc, DEFAULT_VALIDATION_TOLERANCE).is_ok());

        let fc = RisArchitecture::new(3, 1).unwrap();
        let full = TunableImpedance::from_blocks(fc, vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
        let zm = full.to_matrix();
        assert_eq!(zm[(0, 2)], c(0.0, 4.0));
        assert_eq!(zm[(2, 1)], c(0.0, 5.0));
        assert!(validate_impedance(&zm, fc, DEFAULT_VALIDATION_TOLERANCE).is_ok());
    }

    #[test]
    fn validation_reports_first_violation() {
        let fc = RisArchitecture::new(3, 1).unwrap();
        let mut z = ComplexMatrix::zeros(3, 3);
        z[(1, 2)] = c(1e-3, 0.0);
        z[(2, 1)] = c(1e-3, 0.0);
        let v = validate_impedance(&z, fc, DEFAULT_VALIDATION_TOLERANCE).unwrap_err();
        assert_eq!((v.row, v.col, v.kind), (1, 2, ViolationKind::RealPart));

        let gc = RisArchitecture::new(4, 2).unwrap();
        let mut z = ComplexMatrix::zeros(4, 4);
        z[(3, 0)] = c(0.0, 1.0);
        let v = validate_impedance(&z, gc, DEFAULT_VALIDATION_TOLERANCE).unwrap_err();
        assert_eq!((v.row, v.col, v.kind), (3, 0, ViolationKind::OffGroup));

        let mut z = ComplexMatrix::zeros(4, 4);
        z[(0, 1)] = c(0.0, 1.0);
        let v = validate_impedance(&z, gc, DEFAULT_VALIDATION_TOLERANCE).unwrap_err();
        assert_eq!((v.row, v.col, v.kind), (0, 1, ViolationKind::Asymmetric));
    }

    #[test]
    fn symmetry_map_small_cases() {
        let p1 = build_symmetry_map(1);
        assert_eq!(p1.to_dense(), nalgebra::DMatrix::from_element(1, 1, 1u8));
        let p2 = build_symmetry_map(2);
        assert_eq!((p2.rows(), p2.cols()), (4, 3));
        // vec(Ω) = (Ω11, Ω21, Ω12, Ω22) -> (ω1, ω2, ω2, ω3)
        assert_eq!(
            (0..4).map(|r| p2.column_of(r)).collect::<Vec<_>>(),
            vec![0, 1, 1, 2]
        );
        assert!(Arc::ptr_eq(&p2, &build_symmetry_map(2)));
    }

    #[test]
    fn expand_increment_places_entries() {
        let d = 0.25;
        let p = build_symmetry_map(2);
        let ones = expand_increment(&[c(d, 0.0); 3], &p).unwrap();
        assert_eq!(ones, ComplexMatrix::from_element(2, 2, c(d, 0.0)));
        let om = expand_increment(&[c(d, 0.0), c(0.0, d), c(-d, 0.0)], &p).unwrap();
        assert_eq!(
            om,
            ComplexMatrix::from_row_slice(2, 2, &[c(d, 0.0), c(0.0, d), c(0.0, d), c(-d, 0.0)])
        );
        assert!(matches!(expand_increment(&[c(d, 0.0); 2], &p), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn block_diagonal_assembly() {
        let a = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(4.0, 0.0)]);
        let b = ComplexMatrix::from_row_slice(2, 2, &[c(5.0, 1.0), c(6.0, 0.0), c(7.0, 0.0), c(8.0, 0.0)]);
        let out = assemble_block_diagonal(&[a.clone(), b]).unwrap();
        let mut zeros = 0;
        for i in 0..4 {
            for j in 0..4 {
                if i / 2 != j / 2 {
                    assert_eq!(out[(i, j)], c(0.0, 0.0));
                    zeros += 1;
                }
            }
        }
        assert_eq!(zeros, 8);
        assert_eq!(assemble_block_diagonal(&[a.clone()]).unwrap(), a);
        let eye = assemble_block_diagonal(&[ComplexMatrix::identity(2, 2), ComplexMatrix::identity(2, 2)]).unwrap();
        assert_eq!(eye, ComplexMatrix::identity(4, 4));
        assert!(assemble_block_diagonal(&[a, ComplexMatrix::identity(3, 3)]).is_err());
    }

    #[test]
    fn tunable_json_shape_and_validation() {
        let arch = RisArchitecture::new(4, 2).unwrap();
        let z = TunableImpedance::from_blocks(arch, vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let s = serde_json::to_string(&z).unwrap();
        assert_eq!(s, r#"{"M":4,"G":2,"blocks":[[1.0,2.0,3.0],[-1.0,0.5,4.0]]}"#);
        assert_eq!(serde_json::from_str::<TunableImpedance>(&s).unwrap(), z);
        assert!(serde_json::from_str::<TunableImpedance>(r#"{"M":4,"G":3,"blocks":[]}"#).is_err());
        assert!(serde_json::from_str::<TunableImpedance>(r#"{"M":4,"G":2,"blocks":[[1.0],[2.0]]}"#).is_err());
    }

    fn single_terms(z_rt: Complex64, q: Complex64, zii: Complex64) -> ChannelTerms {
        ChannelTerms {
            z_rt,
            z_ri: ComplexVector::from_vec(vec![q]),
            z_ii: ComplexMatrix::from_element(1, 1, zii),
            z_it: ComplexVector::from_vec(vec![c(1.0, 0.0)]),
            z0: 50.0,
        }
    }

    #[test]
    fn init_single_element_matches_dense_grid() {
        let zii = c(0.19, -1300.0);
        for z_rt in [c(0.0, 0.0), c(0.3, 0.1), c(-2.0, 1.5)] {
            let terms = single_terms(z_rt, c(0.02, -0.01), zii);
            let arch = RisArchitecture::new(1, 1).unwrap();
            let x = init_no_mc(&terms, arch).unwrap().reactance(0, 0);
            let gain = |x: f64| (z_rt - terms.z_ri[0] / (zii + c(0.0, x))).norm_sqr();
            // Brute force over a window of ±200 resistances around resonance.
            let window = 200.0 * zii.re;
            let n = 1_000_000;
            let brute = (0..=n)
                .map(|i| gain(-zii.im - window + 2.0 * window * i as f64 / n as f64))
                .fold(0.0, f64::max);
            assert!(gain(x) >= brute * (1.0 - 1e-3), "x={x} gain={} brute={brute}", gain(x));
        }
    }

    #[test]
    fn init_is_symmetric_for_mirrored_elements() {
        let zii = ComplexMatrix::from_row_slice(2, 2, &[c(0.2, -1300.0), c(0.15, 40.0), c(0.15, 40.0), c(0.2, -1300.0)]);
        let terms = ChannelTerms {
            z_rt: c(0.0, 0.0),
            z_ri: ComplexVector::from_vec(vec![c(0.01, 0.02); 2]),
            z_ii: zii,
            z_it: ComplexVector::from_vec(vec![c(-0.03, 0.01); 2]),
            z0: 50.0,
        };
        for g in [1, 2] {
            let arch = RisArchitecture::new(2, g).unwrap();
            let z = init_no_mc(&terms, arch).unwrap();
            assert!((z.reactance(0, 0) - z.reactance(1, 1)).abs() < 1e-9);
            assert_eq!(z.reactance(0, 1), 0.0);
            assert!(validate_impedance(&z.to_matrix(), arch, DEFAULT_VALIDATION_TOLERANCE).is_ok());
            assert_eq!(fro_norm(&(z.to_matrix() - z.to_matrix().transpose())), 0.0);
        }
    }

    #[test]
    fn init_is_a_local_maximum_of_the_decoupled_problem() {
        let m = 6;
        let zii = ComplexMatrix::from_fn(m, m, |i, j| if i == j { c(0.19 + 0.01 * i as f64, -1500.0) } else { c(0.0, 0.0) });
        let terms = ChannelTerms {
            z_rt: c(1e-6, -2e-6),
            z_ri: ComplexVector::from_fn(m, |i, _| Complex64::from_polar(7e-5 * (1.0 + 0.01 * i as f64), 0.7 * i as f64)),
            z_ii: zii,
            z_it: ComplexVector::from_fn(m, |i, _| Complex64::from_polar(6e-5, -0.3 * i as f64 * i as f64)),
            z0: 50.0,
        };
        let arch = RisArchitecture::single_connected(m).unwrap();
        let z = init_no_mc(&terms, arch).unwrap();
        let x: Vec<f64> = (0..m).map(|i| z.reactance(i, i)).collect();
        let g0 = terms.objective(&z).unwrap().norm();
        for i in 0..m {
            for h in [-1e-3, 1e-3] {
                let mut y = x.clone();
                y[i] += h;
                let g = terms.objective(&TunableImpedance::from_diagonal(arch, &y).unwrap()).unwrap().norm();
                assert!(g <= g0 * (1.0 + 1e-12), "element {i}, step {h}");
            }
        }
    }
}
