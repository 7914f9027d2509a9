//! Brute-force reference search over the reflection matrix for small surfaces.
//!
//! Each group's reflection block is symmetric and unitary. For one port it is
//! `e^{jφ}`; for two ports it is `R(ψ)·diag(e^{jθ₁}, e^{jθ₂})·R(ψ)ᵀ` with a real
//! rotation `R(ψ)`. The search grids these angles and maps every point back to
//! a reactance matrix.
//!
//! Referenced to the usual 50 Ω, the resonance of an electrically small
//! element is some 1e-5 rad wide and no grid resolves it. The reflection is
//! therefore taken relative to the elements' own self-impedance: a reference
//! resistance equal to the mean radiation resistance and a reactance offset
//! that tunes every element to resonance at `Θ = −I`. This is a bijection
//! onto the same set of lossless reciprocal designs, but spreads the
//! resonances over the whole circle. The best grid cells are then repeatedly
//! subdivided (a beam of cells is kept at every level) before a final
//! coordinate-wise golden-section polish.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architecture::{assemble_block_diagonal, golden_section_max, RisArchitecture, TunableImpedance};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::network::{channel_gain, impedance_from_theta, ChannelTerms};

/// Largest surface the oracle accepts.
pub const MAX_ORACLE_ELEMENTS: usize = 4;
/// Largest number of grid points evaluated in one search.
pub const MAX_GRID_POINTS: u64 = 200_000_000;
/// Cells kept at every subdivision level.
const BEAM: usize = 48;
/// Points per angle when a cell is subdivided.
const SUBDIVISION: usize = 8;
/// Subdivision stops once cells are this narrow (radians).
const FINEST_CELL: f64 = 1e-11;
/// Starts for the final coordinate polish.
const POLISH_STARTS: usize = 4;
const MAX_PASSES: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub z_i: TunableImpedance,
    pub gain: f64,
    /// Best gain on the raw grid, before local refinement.
    pub grid_gain: f64,
    /// Reflection angles of the returned design, group by group.
    pub angles: Vec<f64>,
    pub evaluations: u64,
}

/// Angles per group: 1 for single ports, 3 for pairs.
fn params_per_group(size: usize) -> Result<usize> {
    match size {
        1 => Ok(1),
        2 => Ok(3),
        s => Err(Error::InvalidArchitecture(format!(
            "oracle parameterizes groups of 1 or 2 elements, not {s}"
        ))),
    }
}

/// Symmetric unitary reflection block from its angles.
pub fn theta_block(angles: &[f64]) -> ComplexMatrix {
    match *angles {
        [phi] => ComplexMatrix::from_element(1, 1, Complex64::from_polar(1.0, phi)),
        [t1, t2, psi] => {
            let (s, c) = psi.sin_cos();
            let (e1, e2) = (Complex64::from_polar(1.0, t1), Complex64::from_polar(1.0, t2));
            ComplexMatrix::from_row_slice(
                2,
                2,
                &[
                    e1 * c * c + e2 * s * s,
                    (e1 - e2) * c * s,
                    (e1 - e2) * c * s,
                    e1 * s * s + e2 * c * c,
                ],
            )
        }
        _ => panic!("theta_block expects 1 or 3 angles, got {}", angles.len()),
    }
}

/// Reference impedance used to map reflection angles to reactances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub resistance: f64,
    /// Reactance added to each element's diagonal entry.
    pub offsets: Vec<f64>,
}

impl Reference {
    /// Self-impedance reference: mean radiation resistance, offsets `−Im{[Z_II]_mm}`.
    pub fn self_matched(terms: &ChannelTerms) -> Self {
        let m = terms.elements();
        let resistance = (0..m).map(|i| terms.z_ii[(i, i)].re).sum::<f64>() / m as f64;
        Reference {
            resistance,
            offsets: (0..m).map(|i| -terms.z_ii[(i, i)].im).collect(),
        }
    }
}

/// Reactance design for a full angle vector.
pub fn design_from_angles(arch: RisArchitecture, reference: &Reference, angles: &[f64]) -> Result<TunableImpedance> {
    let per = params_per_group(arch.group_size())?;
    if angles.len() != per * arch.groups() {
        return Err(Error::DimensionMismatch(format!(
            "{arch} needs {} angles, got {}",
            per * arch.groups(),
            angles.len()
        )));
    }
    let blocks: Vec<ComplexMatrix> = angles.chunks(per).map(theta_block).collect();
    let theta = assemble_block_diagonal(&blocks)?;
    let base = impedance_from_theta(&theta, arch, reference.resistance)?;
    let mut z = base.to_matrix();
    for (i, x) in reference.offsets.iter().enumerate() {
        z[(i, i)].im += x;
    }
    TunableImpedance::from_matrix_imag(arch, &z)
}

struct Space {
    arch: RisArchitecture,
    reference: Reference,
    per: usize,
    dims: usize,
    resolution: usize,
}

impl Space {
    /// Period of each angle: ψ has period π, the phases 2π.
    fn span(&self, dim: usize) -> f64 {
        if self.per == 3 && dim % 3 == 2 {
            PI
        } else {
            2.0 * PI
        }
    }

    fn step(&self, dim: usize) -> f64 {
        self.span(dim) / self.resolution as f64
    }

    /// Cell-centred grid point; the centring keeps `Θ = I` off the grid.
    fn point(&self, mut index: u64) -> Vec<f64> {
        let n = self.resolution as u64;
        (0..self.dims)
            .map(|d| {
                let i = index % n;
                index /= n;
                (i as f64 + 0.5) * self.step(d)
            })
            .collect()
    }
}

fn evaluate(terms: &ChannelTerms, space: &Space, angles: &[f64]) -> f64 {
    design_from_angles(space.arch, &space.reference, angles)
        .and_then(|z| channel_gain(terms, &z))
        .unwrap_or(f64::NEG_INFINITY)
}

fn keep_top(mut top: Vec<(f64, u64)>, item: (f64, u64)) -> Vec<(f64, u64)> {
    if !item.0.is_finite() {
        return top;
    }
    top.push(item);
    top.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    top.truncate(BEAM);
    top
}

/// Best cells among `count` candidates produced by `point`.
fn best_cells<F>(terms: &ChannelTerms, space: &Space, count: u64, point: F) -> Vec<(f64, u64)>
where
    F: Fn(u64) -> Vec<f64> + Sync,
{
    (0..count)
        .into_par_iter()
        .fold(Vec::new, |acc, i| keep_top(acc, (evaluate(terms, space, &point(i)), i)))
        .reduce(Vec::new, |a, b| b.into_iter().fold(a, keep_top))
}

/// Exhaustive grid search over the reflection angles, then local refinement.
///
/// `grid_resolution` is the number of grid points per angle.
pub fn oracle_search(terms: &ChannelTerms, arch: RisArchitecture, grid_resolution: usize) -> Result<OracleResult> {
    let m = terms.elements();
    if m > MAX_ORACLE_ELEMENTS {
        return Err(Error::CostGuard(format!(
            "oracle search is limited to {MAX_ORACLE_ELEMENTS} elements, scenario has {m}"
        )));
    }
    if arch.elements() != m {
        return Err(Error::DimensionMismatch(format!(
            "scenario has {m} elements, architecture {}",
            arch.elements()
        )));
    }
    if grid_resolution < 2 {
        return Err(Error::InvalidConfig("grid_resolution must be at least 2".into()));
    }
    let per = params_per_group(arch.group_size())?;
    let space = Space {
        arch,
        reference: Reference::self_matched(terms),
        per,
        dims: per * arch.groups(),
        resolution: grid_resolution,
    };
    let total = (grid_resolution as u64)
        .checked_pow(space.dims as u32)
        .filter(|&t| t <= MAX_GRID_POINTS)
        .ok_or_else(|| {
            Error::CostGuard(format!(
                "{grid_resolution}^{} grid points exceed the limit of {MAX_GRID_POINTS}",
                space.dims
            ))
        })?;

    let top = best_cells(terms, &space, total, |i| space.point(i));
    let Some(&(grid_gain, _)) = top.first() else {
        return Err(Error::SingularMatrix {
            rcond: 0.0,
            threshold: 0.0,
        });
    };
    let mut evaluations = total;

    // Beam of (centre, cell widths); all cells of one level share widths.
    let mut widths: Vec<f64> = (0..space.dims).map(|d| space.step(d)).collect();
    let mut beam: Vec<(f64, Vec<f64>)> = top.iter().map(|&(g, i)| (g, space.point(i))).collect();
    let per_cell = (SUBDIVISION as u64).pow(space.dims as u32);
    while widths.iter().cloned().fold(0.0, f64::max) > FINEST_CELL {
        let sub: Vec<f64> = widths.iter().map(|w| w / SUBDIVISION as f64).collect();
        let candidates = beam.len() as u64 * per_cell;
        let point = |i: u64| {
            let (centre, mut k) = (&beam[(i / per_cell) as usize].1, i % per_cell);
            (0..space.dims)
                .map(|d| {
                    let j = (k % SUBDIVISION as u64) as f64;
                    k /= SUBDIVISION as u64;
                    centre[d] - 0.5 * widths[d] + (j + 0.5) * sub[d]
                })
                .collect::<Vec<f64>>()
        };
        let next = best_cells(terms, &space, candidates, point);
        evaluations += candidates;
        // Never lose the best point found so far.
        let mut merged: Vec<(f64, Vec<f64>)> = next.iter().map(|&(g, i)| (g, point(i))).collect();
        if let Some(b) = beam.first() {
            if merged.first().map_or(true, |m| b.0 > m.0) {
                merged.insert(0, b.clone());
                merged.truncate(BEAM);
            }
        }
        beam = merged;
        widths = sub;
    }

    let polished: Vec<(f64, Vec<f64>, u64)> = beam
        .iter()
        .take(POLISH_STARTS)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(_, p)| refine(terms, &space, p.clone(), &widths))
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (g, p, n) in polished {
        evaluations += n;
        if best.as_ref().map_or(true, |(bg, _)| g > *bg) {
            best = Some((g, p));
        }
    }
    let (_, angles) = best.expect("at least one start");
    let z_i = design_from_angles(arch, &space.reference, &angles)?;
    let gain = channel_gain(terms, &z_i)?;
    Ok(OracleResult {
        z_i,
        gain,
        grid_gain,
        angles,
        evaluations,
    })
}

/// Coordinate-wise golden-section passes with brackets shrinking from `widths`.
fn refine(terms: &ChannelTerms, space: &Space, mut p: Vec<f64>, widths: &[f64]) -> (f64, Vec<f64>, u64) {
    let mut value = evaluate(terms, space, &p);
    let mut evaluations = 0u64;
    let mut scale = 1.0;
    for _ in 0..MAX_PASSES {
        let start = value;
        for d in 0..space.dims {
            let h = scale * widths[d];
            let centre = p[d];
            let mut trial = p.clone();
            let f = |x: f64| {
                let mut q = trial.clone();
                q[d] = x;
                evaluate(terms, space, &q)
            };
            let x = golden_section_max(&f, centre - h, centre + h, 1e-15 * (1.0 + centre.abs()));
            evaluations += 80;
            trial[d] = x;
            let v = evaluate(terms, space, &trial);
            if v > value {
                value = v;
                p = trial;
            }
        }
        if value <= start * (1.0 + 1e-12) {
            scale *= 0.25;
            if scale < 1e-6 {
                break;
            }
        }
    }
    (value, p, evaluations)
}

/// Dense scan of a single element's reactance over `[lo, hi]`, followed by a
/// golden-section polish around the best sample. Returns `(x, gain)`.
pub fn scan_single_reactance(terms: &ChannelTerms, lo: f64, hi: f64, points: usize) -> Result<(f64, f64)> {
    if terms.elements() != 1 {
        return Err(Error::DimensionMismatch("single-reactance scan needs one element".into()));
    }
    if !(hi > lo) || points < 2 {
        return Err(Error::InvalidConfig("scan needs lo < hi and at least 2 points".into()));
    }
    let arch = RisArchitecture::single_connected(1)?;
    let gain = |x: f64| {
        TunableImpedance::from_diagonal(arch, &[x])
            .and_then(|z| channel_gain(terms, &z))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let step = (hi - lo) / (points - 1) as f64;
    let (bx, _) = (0..points)
        .into_par_iter()
        .map(|i| {
            let x = lo + step * i as f64;
            (x, gain(x))
        })
        .reduce(|| (lo, f64::NEG_INFINITY), |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
    let x = golden_section_max(gain, bx - step, bx + step, 1e-12 * (1.0 + bx.abs()));
    let (x, g) = if gain(x) >= gain(bx) { (x, gain(x)) } else { (bx, gain(bx)) };
    Ok((x, g))
}
