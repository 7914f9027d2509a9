//! Thin-wire dipole model of the link and its mutual impedances.
//!
//! Every radiating element (transmitter, receiver and surface elements) is a
//! z-directed thin-wire dipole with a sinusoidal current distribution. The
//! surface lies in the y–z plane centered at the origin.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::network::{ChannelTerms, DEFAULT_STRUCTURE_TOLERANCE, DEFAULT_Z0};
use crate::quadrature::{gauss_legendre, integrate_panels, normalize_breaks, GaussRule};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Free-space wave impedance used by the dipole model, in ohms.
pub const FREE_SPACE_IMPEDANCE: f64 = 377.0;

pub const DEFAULT_QUADRATURE_ORDER: usize = 16;
pub const DEFAULT_QUADRATURE_TOLERANCE: f64 = 1e-6;

/// Wavelength, wavenumber and wave impedance at one frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedConstants {
    pub wavelength: f64,
    pub wavenumber: f64,
    pub eta0: f64,
}

impl DerivedConstants {
    pub fn at_frequency(frequency_hz: f64) -> Result<Self> {
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("frequency must be positive, got {frequency_hz}")));
        }
        let wavelength = SPEED_OF_LIGHT / frequency_hz;
        Ok(DerivedConstants {
            wavelength,
            wavenumber: 2.0 * PI / wavelength,
            eta0: FREE_SPACE_IMPEDANCE,
        })
    }
}

/// A z-directed thin-wire dipole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    /// Center `(x, y, z)` in meters.
    pub center: [f64; 3],
    pub length: f64,
    pub radius: f64,
}

impl Dipole {
    pub fn new(center: [f64; 3], length: f64, radius: f64) -> Result<Self> {
        if !(length > 0.0 && radius > 0.0 && radius < length) || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "dipole needs 0 < radius < length, got length {length} and radius {radius}"
            )));
        }
        Ok(Dipole { center, length, radius })
    }

    fn lateral_distance(&self, other: &Dipole) -> f64 {
        (self.center[0] - other.center[0]).hypot(self.center[1] - other.center[1])
    }
}

/// Quadrature order and refinement tolerance for [`mutual_impedance`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSettings {
    pub order: usize,
    pub relative_tolerance: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            order: DEFAULT_QUADRATURE_ORDER,
            relative_tolerance: DEFAULT_QUADRATURE_TOLERANCE,
        }
    }
}

/// Field kernel between two current elements at axial offset `dz` and lateral distance `rho`.
fn kernel(dz: f64, rho: f64, k: &DerivedConstants) -> Complex64 {
    let kappa = k.wavenumber;
    let d2 = rho * rho + dz * dz;
    let d = d2.sqrt();
    let j = Complex64::new(0.0, 1.0);
    let bracket = (dz * dz / d2) * (3.0 / d2 + 3.0 * j * kappa / d - kappa * kappa) - (j * kappa + 1.0 / d) / d
        + kappa * kappa;
    let pref = j * k.eta0 / (4.0 * PI * kappa);
    pref * bracket * Complex64::from_polar(1.0 / d, -kappa * d)
}

/// Sinusoidal current weight at offset `s` from the dipole center, before normalization.
fn current(s: f64, half_length: f64, kappa: f64) -> f64 {
    (kappa * (half_length - s.abs())).sin()
}

/// Evaluates the double line integral with one pair of panel sets at a fixed order.
///
/// The integrand depends on the two wire positions only through their axial
/// separation, so with `s`, `t` the offsets from each center the integral is
/// taken over `u = s − t` (outer) and `t` (inner). Panels split at the
/// current kinks and grade geometrically toward the kernel's near-singular
/// point `u = −(a_z − b_z)`, whose width is the lateral distance.
fn mutual_impedance_at(a: &Dipole, b: &Dipole, rho: f64, k: &DerivedConstants, rule: &GaussRule) -> Complex64 {
    let kappa = k.wavenumber;
    let (ha, hb) = (0.5 * a.length, 0.5 * b.length);
    let c = a.center[2] - b.center[2];
    let (lo, hi) = (-(ha + hb), ha + hb);

    let mut breaks = Vec::new();
    for sk in [-ha, 0.0, ha] {
        for tk in [-hb, 0.0, hb] {
            breaks.push(sk - tk);
        }
    }
    let peak = -c;
    if rho > 0.0 && peak > lo - rho && peak < hi + rho {
        breaks.push(peak);
        let mut w = rho;
        while w < hi - lo {
            breaks.push(peak - w);
            breaks.push(peak + w);
            w *= 2.0;
        }
    }
    let breaks = normalize_breaks(breaks, lo, hi);

    let overlap = |u: f64| -> Complex64 {
        let t_lo = (-hb).max(-ha - u);
        let t_hi = hb.min(ha - u);
        if t_hi <= t_lo {
            return Complex64::new(0.0, 0.0);
        }
        let inner = normalize_breaks(vec![0.0, -u], t_lo, t_hi);
        integrate_panels(rule, &inner, |t| {
            Complex64::new(current(t + u, ha, kappa) * current(t, hb, kappa), 0.0)
        })
    };
    let norm = (kappa * ha).sin() * (kappa * hb).sin();
    integrate_panels(rule, &breaks, |u| kernel(c + u, rho, k) * overlap(u)) / norm
}

/// Mutual impedance between two z-directed dipoles (self impedance when `a == b`).
///
/// For `a == b` the lateral distance is replaced by the wire radius. The
/// value at order `2n` is returned after checking it against order `n`.
pub fn mutual_impedance(
    a: &Dipole,
    b: &Dipole,
    constants: &DerivedConstants,
    settings: QuadratureSettings,
) -> Result<Complex64> {
    if settings.order == 0 {
        return Err(Error::InvalidConfig("quadrature order must be positive".into()));
    }
    let rho = if a == b {
        a.radius
    } else {
        let lateral = a.lateral_distance(b);
        let axial_gap = (a.center[2] - b.center[2]).abs() - 0.5 * (a.length + b.length);
        if lateral < a.radius + b.radius && axial_gap <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "distinct dipoles at {:?} and {:?} overlap",
                a.center, b.center
            )));
        }
        lateral
    };
    let coarse = mutual_impedance_at(a, b, rho, constants, &gauss_legendre(settings.order));
    let fine = mutual_impedance_at(a, b, rho, constants, &gauss_legendre(2 * settings.order));
    let change = (fine - coarse).norm() / fine.norm().max(f64::MIN_POSITIVE);
    if !(change <= settings.relative_tolerance) {
        return Err(Error::QuadratureNotConverged {
            order: settings.order,
            refined: 2 * settings.order,
            relative_change: change,
            tolerance: settings.relative_tolerance,
        });
    }
    Ok(fine)
}

/// Rows along z and columns along y of the surface grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

impl GridLayout {
    /// The factorization `rows × cols = M` closest to square with `rows ≤ cols`.
    pub fn near_square(elements: usize) -> Self {
        let rows = (1..=elements)
            .take_while(|r| r * r <= elements)
            .filter(|r| elements % r == 0)
            .last()
            .unwrap_or(1);
        GridLayout {
            rows,
            cols: elements / rows.max(1),
        }
    }
}

/// Surface element centers in the y–z plane, spacing `d` in both directions,
/// centroid at the origin, y varying fastest.
pub fn place_ris_grid(elements: usize, spacing: f64, layout: GridLayout, length: f64, radius: f64) -> Result<Vec<Dipole>> {
    if layout.rows * layout.cols != elements {
        return Err(Error::InvalidGeometry(format!(
            "{}x{} grid does not hold {elements} elements",
            layout.rows, layout.cols
        )));
    }
    if !(spacing > 2.0 * radius) {
        return Err(Error::InvalidGeometry(format!(
            "spacing {spacing} m must exceed the wire diameter {}",
            2.0 * radius
        )));
    }
    let y0 = 0.5 * (layout.cols as f64 - 1.0);
    let z0 = 0.5 * (layout.rows as f64 - 1.0);
    let mut out = Vec::with_capacity(elements);
    for row in 0..layout.rows {
        for col in 0..layout.cols {
            let center = [0.0, (col as f64 - y0) * spacing, (row as f64 - z0) * spacing];
            out.push(Dipole::new(center, length, radius)?);
        }
    }
    Ok(out)
}

/// Deployment described in SI-friendly units; this is the on-disk scenario format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub frequency_ghz: f64,
    /// Transmitter dipole center, meters.
    pub tx_xyz: [f64; 3],
    /// Receiver dipole center, meters.
    pub rx_xyz: [f64; 3],
    /// Number of surface elements.
    pub m: usize,
    /// Element spacing as a fraction of the wavelength.
    pub spacing_over_lambda: f64,
    /// Group size used by the group-connected architecture.
    pub group_size: usize,
    /// `[rows, cols]`; near-square when omitted.
    #[serde(default)]
    pub grid: Option<[usize; 2]>,
    pub quadrature_order: usize,
    /// Direct transmitter-receiver impedance `[re, im]`; zero when omitted.
    #[serde(default)]
    pub z_rt: Option<[f64; 2]>,
    #[serde(default = "default_length")]
    pub length_over_lambda: f64,
    #[serde(default = "default_radius")]
    pub radius_over_lambda: f64,
    /// Transmitter/receiver dipole size; surface element size when omitted.
    #[serde(default)]
    pub endpoint_length_over_lambda: Option<f64>,
    #[serde(default)]
    pub endpoint_radius_over_lambda: Option<f64>,
    #[serde(default = "default_z0")]
    pub z0: f64,
}

fn default_length() -> f64 {
    1.0 / 32.0
}

fn default_radius() -> f64 {
    1.0 / 500.0
}

fn default_z0() -> f64 {
    DEFAULT_Z0
}

impl Default for ScenarioConfig {
    /// 16 elements at 28 GHz, transmitter at (5, −5, 3), receiver at (5, 5, 1), half-wavelength spacing.
    fn default() -> Self {
        ScenarioConfig {
            frequency_ghz: 28.0,
            tx_xyz: [5.0, -5.0, 3.0],
            rx_xyz: [5.0, 5.0, 1.0],
            m: 16,
            spacing_over_lambda: 0.5,
            group_size: 4,
            grid: None,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            z_rt: None,
            length_over_lambda: default_length(),
            radius_over_lambda: default_radius(),
            endpoint_length_over_lambda: None,
            endpoint_radius_over_lambda: None,
            z0: DEFAULT_Z0,
        }
    }
}

impl ScenarioConfig {
    pub fn frequency_hz(&self) -> f64 {
        self.frequency_ghz * 1e9
    }

    pub fn constants(&self) -> Result<DerivedConstants> {
        DerivedConstants::at_frequency(self.frequency_hz())
    }

    pub fn layout(&self) -> GridLayout {
        match self.grid {
            Some([rows, cols]) => GridLayout { rows, cols },
            None => GridLayout::near_square(self.m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.frequency_ghz.is_finite() && self.frequency_ghz > 0.0) {
            return bad(format!("frequency_ghz must be positive, got {}", self.frequency_ghz));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.group_size == 0 || self.m % self.group_size != 0 {
            return bad(format!("group_size {} does not divide m = {}", self.group_size, self.m));
        }
        let layout = self.layout();
        if layout.rows * layout.cols != self.m {
            return bad(format!("grid {}x{} does not hold m = {}", layout.rows, layout.cols, self.m));
        }
        if !(self.spacing_over_lambda > 0.0) {
            return bad(format!("spacing_over_lambda must be positive, got {}", self.spacing_over_lambda));
        }
        if self.quadrature_order == 0 {
            return bad("quadrature_order must be positive".into());
        }
        if !(self.z0 > 0.0) {
            return bad(format!("z0 must be positive, got {}", self.z0));
        }
        if self.tx_xyz.iter().chain(&self.rx_xyz).any(|v| !v.is_finite()) {
            return bad("tx_xyz and rx_xyz must be finite".into());
        }
        Ok(())
    }

    /// Stable content hash used as the channel-term cache key.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario config is always serializable");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..16])
    }

    pub fn ris_dipoles(&self) -> Result<Vec<Dipole>> {
        let lambda = self.constants()?.wavelength;
        place_ris_grid(
            self.m,
            self.spacing_over_lambda * lambda,
            self.layout(),
            self.length_over_lambda * lambda,
            self.radius_over_lambda * lambda,
        )
    }

    fn endpoint(&self, center: [f64; 3]) -> Result<Dipole> {
        let lambda = self.constants()?.wavelength;
        let length = self.endpoint_length_over_lambda.unwrap_or(self.length_over_lambda) * lambda;
        let radius = self.endpoint_radius_over_lambda.unwrap_or(self.radius_over_lambda) * lambda;
        Dipole::new(center, length, radius)
    }

    pub fn tx_dipole(&self) -> Result<Dipole> {
        self.endpoint(self.tx_xyz)
    }

    pub fn rx_dipole(&self) -> Result<Dipole> {
        self.endpoint(self.rx_xyz)
    }
}

/// Computes `z_RT`, `z_RI`, `Z_II` and `z_IT` for a deployment.
///
/// Only the upper triangle of `Z_II` is integrated; it is mirrored so the
/// result is exactly symmetric.
pub fn build_scenario(config: &ScenarioConfig) -> Result<ChannelTerms> {
    config.validate()?;
    let constants = config.constants()?;
    let settings = QuadratureSettings {
        order: config.quadrature_order,
        ..QuadratureSettings::default()
    };
    let ris = config.ris_dipoles()?;
    let tx = config.tx_dipole()?;
    let rx = config.rx_dipole()?;
    let m = ris.len();

    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| mutual_impedance(&ris[i], &ris[j], &constants, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut z_ii = ComplexMatrix::zeros(m, m);
    for (&(i, j), v) in pairs.iter().zip(values) {
        z_ii[(i, j)] = v;
        z_ii[(j, i)] = v;
    }
    let z_ri = ris
        .par_iter()
        .map(|e| mutual_impedance(&rx, e, &constants, settings))
        .collect::<Result<Vec<_>>>()?;
    let z_it = ris
        .par_iter()
        .map(|e| mutual_impedance(e, &tx, &constants, settings))
        .collect::<Result<Vec<_>>>()?;
    let z_rt = config.z_rt.map_or(Complex64::new(0.0, 0.0), |[re, im]| Complex64::new(re, im));
    ChannelTerms::new(
        z_rt,
        ComplexVector::from_vec(z_ri),
        z_ii,
        ComplexVector::from_vec(z_it),
        config.z0,
        DEFAULT_STRUCTURE_TOLERANCE,
    )
}

/// Copy of `terms` with the off-diagonal (coupling) entries of `Z_II` set to zero.
pub fn decouple(terms: &ChannelTerms) -> ChannelTerms {
    let mut out = terms.clone();
    let m = out.elements();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                out.z_ii[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_constants() -> DerivedConstants {
        DerivedConstants::at_frequency(28e9).unwrap()
    }

    fn element(center: [f64; 3]) -> Dipole {
        let l = paper_constants().wavelength;
        Dipole::new(center, l / 32.0, l / 500.0).unwrap()
    }

    #[test]
    fn constants_are_consistent() {
        let k = paper_constants();
        assert!((k.wavelength * 28e9 - SPEED_OF_LIGHT).abs() / SPEED_OF_LIGHT < 1e-12);
        assert!((k.wavenumber * k.wavelength - 2.0 * PI).abs() < 1e-12);
        assert!(DerivedConstants::at_frequency(0.0).is_err());
    }

    #[test]
    fn dipole_validation() {
        assert!(Dipole::new([0.0; 3], 1.0, 2.0).is_err());
        assert!(Dipole::new([0.0; 3], 0.0, 0.0).is_err());
        assert!(Dipole::new([0.0; 3], 1.0, 0.01).is_ok());
    }

    #[test]
    fn mutual_impedance_is_reciprocal() {
        let k = paper_constants();
        let l = k.wavelength;
        let a = element([0.0, 0.0, 0.0]);
        for b in [
            element([0.0, l / 8.0, 0.0]),
            element([0.0, l / 4.0, l / 4.0]),
            element([0.0, 0.0, l / 8.0]),
            element([5.0, 5.0, 1.0]),
        ] {
            let ab = mutual_impedance(&a, &b, &k, QuadratureSettings::default()).unwrap();
            let ba = mutual_impedance(&b, &a, &k, QuadratureSettings::default()).unwrap();
            assert!((ab - ba).norm() / ab.norm() < 1e-10, "{ab} vs {ba}");
        }
    }

    #[test]
    fn self_impedance_is_stable_and_passive() {
        let k = paper_constants();
        let a = element([0.0; 3]);
        let z = mutual_impedance(&a, &a, &k, QuadratureSettings::default()).unwrap();
        assert!(z.re > 0.0);
        let z2 = mutual_impedance(
            &a,
            &a,
            &k,
            QuadratureSettings {
                order: 2 * DEFAULT_QUADRATURE_ORDER,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((z - z2).norm() / z.norm() < 1e-6);
    }

    #[test]
    fn coupling_decays_with_distance() {
        let k = paper_constants();
        let l = k.wavelength;
        let a = element([0.0; 3]);
        for d in [l / 8.0, l / 4.0, l / 2.0] {
            let near = mutual_impedance(&a, &element([0.0, d, 0.0]), &k, QuadratureSettings::default()).unwrap();
            let far = mutual_impedance(&a, &element([0.0, 2.0 * d, 0.0]), &k, QuadratureSettings::default()).unwrap();
            assert!(far.norm() < near.norm(), "d = {d}: {near} vs {far}");
        }
    }

    #[test]
    fn overlapping_dipoles_are_rejected() {
        let k = paper_constants();
        let a = element([0.0; 3]);
        let b = element([0.0, a.radius, 0.0]);
        assert!(matches!(
            mutual_impedance(&a, &b, &k, QuadratureSettings::default()),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn quadrature_failure_is_reported() {
        let k = paper_constants();
        let a = element([0.0; 3]);
        let res = mutual_impedance(
            &a,
            &a,
            &k,
            QuadratureSettings {
                order: 1,
                relative_tolerance: 1e-6,
            },
        );
        assert!(matches!(res, Err(Error::QuadratureNotConverged { .. })), "{res:?}");
    }

    #[test]
    fn grid_placement() {
        let l = 1.0;
        let one = place_ris_grid(1, 0.5, GridLayout::near_square(1), l / 32.0, l / 500.0).unwrap();
        assert_eq!(one[0].center, [0.0, 0.0, 0.0]);

        let four = place_ris_grid(4, 0.5, GridLayout { rows: 2, cols: 2 }, l / 32.0, l / 500.0).unwrap();
        let centers: Vec<[f64; 3]> = four.iter().map(|d| d.center).collect();
        assert_eq!(
            centers,
            vec![[0.0, -0.25, -0.25], [0.0, 0.25, -0.25], [0.0, -0.25, 0.25], [0.0, 0.25, 0.25]]
        );

        let d = 0.125;
        let sixteen = place_ris_grid(16, d, GridLayout::near_square(16), l / 32.0, l / 500.0).unwrap();
        let mut min = f64::INFINITY;
        for i in 0..16 {
            for j in (i + 1)..16 {
                let a = sixteen[i].center;
                let b = sixteen[j].center;
                let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                min = min.min(dist);
            }
        }
        assert!((min - d).abs() < 1e-15);
        let centroid: f64 = sixteen.iter().map(|p| p.center[1] + p.center[2]).sum();
        assert!(centroid.abs() < 1e-14);

        assert!(place_ris_grid(4, 2.0 * l / 500.0, GridLayout::near_square(4), l / 32.0, l / 500.0).is_err());
        assert!(place_ris_grid(6, 0.5, GridLayout { rows: 2, cols: 2 }, l / 32.0, l / 500.0).is_err());
    }

    #[test]
    fn near_square_layouts() {
        assert_eq!(GridLayout::near_square(16), GridLayout { rows: 4, cols: 4 });
        assert_eq!(GridLayout::near_square(8), GridLayout { rows: 2, cols: 4 });
        assert_eq!(GridLayout::near_square(7), GridLayout { rows: 1, cols: 7 });
        assert_eq!(GridLayout::near_square(1), GridLayout { rows: 1, cols: 1 });
    }

    #[test]
    fn single_element_scenario_and_decoupling() {
        let config = ScenarioConfig {
            m: 1,
            group_size: 1,
            ..ScenarioConfig::default()
        };
        let terms = build_scenario(&config).unwrap();
        let k = config.constants().unwrap();
        let a = config.ris_dipoles().unwrap()[0];
        let z = mutual_impedance(&a, &a, &k, QuadratureSettings::default()).unwrap();
        assert_eq!(terms.z_ii[(0, 0)], z);
        assert_eq!(terms.z_rt, Complex64::new(0.0, 0.0));
        assert_eq!(decouple(&terms), terms);
    }

    #[test]
    fn decouple_zeroes_coupling_only() {
        let config = ScenarioConfig {
            m: 2,
            group_size: 2,
            spacing_over_lambda: 0.125,
            ..ScenarioConfig::default()
        };
        let terms = build_scenario(&config).unwrap();
        assert_ne!(terms.z_ii[(0, 1)], Complex64::new(0.0, 0.0));
        let d = decouple(&terms);
        assert_eq!(d.z_ii[(0, 1)], Complex64::new(0.0, 0.0));
        assert_eq!(d.z_ii[(1, 0)], Complex64::new(0.0, 0.0));
        assert_eq!(d.z_ii[(0, 0)].to_bits(), terms.z_ii[(0, 0)].to_bits());
        assert_eq!(d.z_ri, terms.z_ri);
        assert_eq!(d.z_it, terms.z_it);
        assert_eq!(decouple(&d), d);
    }

    trait ToBits {
        fn to_bits(self) -> (u64, u64);
    }
    impl ToBits for Complex64 {
        fn to_bits(self) -> (u64, u64) {
            (self.re.to_bits(), self.im.to_bits())
        }
    }

    #[test]
    fn config_hash_changes_with_content() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.spacing_over_lambda = 0.25;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
