//! Coupling-aware gain maximization by repeated first-order (Neumann)
//! linearization of the inverse and per-entry phase alignment of the update.

use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::architecture::{build_symmetry_map, expand_increment, init_no_mc, IncrementVector, RisArchitecture, SymmetryMap};
use crate::error::{Error, Result};
use crate::linalg::{norm_inf, ComplexVector, LuFactor, DEFAULT_RCOND_THRESHOLD};
use crate::network::{channel_gain, ChannelTerms};
use crate::TunableImpedance;

pub const DEFAULT_DELTA: f64 = 6e-4;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;
pub const DEFAULT_RELATIVE_TOLERANCE: f64 = 1e-8;
/// Relative drop in `C` tolerated before the guard reports non-monotonicity.
pub const MONOTONE_SLACK: f64 = 1e-6;
/// Below this modulus the anchor phase `∠a` is taken to be zero.
pub const ZERO_ANCHOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Modulus of every increment entry, in ohms.
    pub delta: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Checks the step size against the local inverse norm each iteration and
    /// rejects traces that drop by more than [`MONOTONE_SLACK`].
    #[serde(default)]
    pub neumann_guard: bool,
    #[serde(default = "default_rcond")]
    pub rcond_threshold: f64,
}

fn default_rcond() -> f64 {
    DEFAULT_RCOND_THRESHOLD
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            delta: DEFAULT_DELTA,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            relative_tolerance: DEFAULT_RELATIVE_TOLERANCE,
            neumann_guard: false,
            rcond_threshold: DEFAULT_RCOND_THRESHOLD,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.relative_tolerance > 0.0 && self.relative_tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "relative_tolerance must be positive, got {}",
                self.relative_tolerance
            )));
        }
        if !(self.rcond_threshold >= 0.0) {
            return Err(Error::InvalidConfig("rcond_threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// First-order model of the objective around the current design:
/// `a(Z_I + Ω) ≈ a + b·Ω·c`.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub a: Complex64,
    /// `z_RI (Z_II + Z_I)⁻¹`, stored as a plain vector.
    pub b: ComplexVector,
    /// `(Z_II + Z_I)⁻¹ z_IT`.
    pub c: ComplexVector,
    lu: LuFactor,
}

impl Linearization {
    pub fn gain(&self) -> f64 {
        self.a.norm_sqr()
    }

    /// `e_g = c_gᵀ ⊗ b_g`, laid out against column-major `vec(Ω_g)`.
    pub fn kron_row(&self, arch: RisArchitecture, group: usize) -> Vec<Complex64> {
        let s = arch.group_size();
        let base = group * s;
        let mut e = Vec::with_capacity(s * s);
        for col in 0..s {
            for row in 0..s {
                e.push(self.c[base + col] * self.b[base + row]);
            }
        }
        e
    }

    /// `e_g·P` computed directly from `b` and `c` in packed order.
    pub fn projected_row(&self, arch: RisArchitecture, group: usize) -> Vec<Complex64> {
        let s = arch.group_size();
        let base = group * s;
        let b = &self.b.as_slice()[base..base + s];
        let c = &self.c.as_slice()[base..base + s];
        let mut out = Vec::with_capacity(s * (s + 1) / 2);
        for i in 0..s {
            for j in 0..i {
                out.push(b[i] * c[j] + b[j] * c[i]);
            }
            out.push(b[i] * c[i]);
        }
        out
    }

    /// `M̄·‖(Z_II + Z_I)⁻¹‖_∞`; the linearization is tight while `δ` is far below its reciprocal.
    pub fn neumann_scale(&self, arch: RisArchitecture) -> f64 {
        arch.group_size() as f64 * norm_inf(&self.lu.inverse())
    }
}

pub fn compute_linearization(terms: &ChannelTerms, z_i: &TunableImpedance, rcond_threshold: f64) -> Result<Linearization> {
    let m = terms.elements();
    if z_i.architecture().elements() != m {
        return Err(Error::DimensionMismatch(format!(
            "scenario has {m} elements, design has {}",
            z_i.architecture().elements()
        )));
    }
    let mut z = terms.z_ii.clone();
    z_i.add_to(&mut z);
    let lu = LuFactor::new(&z, rcond_threshold)?;
    let c = lu.solve_vector(&terms.z_it);
    let b = lu.solve_row(&terms.z_ri);
    let a = terms.z_rt - terms.z_ri.dot(&c);
    Ok(Linearization { a, b, c, lu })
}

/// Closed-form maximizer of `|a + Σ_g e_g P ω_g|` under `|[ω_g]_i| = δ`:
/// every term is rotated onto the phase of `a`.
pub fn solve_increment(a: Complex64, projected: &[Vec<Complex64>], delta: f64) -> IncrementVector {
    let anchor = if a.norm() < ZERO_ANCHOR { 0.0 } else { a.arg() };
    let groups = projected
        .iter()
        .map(|row| row.iter().map(|ep| Complex64::from_polar(delta, anchor - ep.arg())).collect())
        .collect();
    IncrementVector { delta, groups }
}

/// `Z_I ← Z_I + j·Im{unvec(P ω_g)}` per group.
///
/// Packed order coincides with the storage order of [`TunableImpedance`],
/// so the imaginary parts are added entry by entry.
pub fn apply_update(z_i: &TunableImpedance, omega: &IncrementVector) -> Result<TunableImpedance> {
    let arch = z_i.architecture();
    let s = arch.group_size();
    if omega.groups.len() != arch.groups() || omega.groups.iter().any(|g| g.len() != s * (s + 1) / 2) {
        return Err(Error::DimensionMismatch(format!(
            "increment does not match {arch}"
        )));
    }
    let mut next = z_i.clone();
    for (g, w) in omega.groups.iter().enumerate() {
        for (k, wk) in w.iter().enumerate() {
            next.add_reactance(g, k, wk.im);
        }
    }
    Ok(next)
}

/// Dense `Ω_g` matrices for an increment (diagnostics and tests).
pub fn increment_blocks(omega: &IncrementVector, p: &SymmetryMap) -> Result<Vec<crate::linalg::ComplexMatrix>> {
    omega.groups.iter().map(|w| expand_increment(w, p)).collect()
}

/// Linearized objective `a + Σ_g [e_g P]·j·Im{ω_g}` after an update.
pub fn predicted_objective(a: Complex64, projected: &[Vec<Complex64>], omega: &IncrementVector) -> Complex64 {
    let mut acc = a;
    for (row, w) in projected.iter().zip(&omega.groups) {
        for (ep, wk) in row.iter().zip(w) {
            acc += ep * Complex64::new(0.0, wk.im);
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    Singular,
}

impl Termination {
    pub fn label(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIter => "max_iter",
            Termination::Singular => "singular",
        }
    }
}

/// One row of the gain trace. Row 0 is the initial design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// `C^l`, the linearized value used by the stopping rule.
    pub c_linearized: f64,
    /// `|a^l|²` evaluated exactly at `Z_I^l` (NaN if it could not be evaluated).
    pub gain_exact: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub z_i: TunableImpedance,
    /// Exact gain of `z_i`, the best iterate seen.
    pub gain: f64,
    pub best_iteration: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TracePoint>,
}

impl OptimizationResult {
    /// Largest relative drop `(C^{l−1} − C^l)/C^{l−1}` along the trace (≤ 0 when non-decreasing).
    pub fn worst_relative_drop(&self) -> f64 {
        self.trace
            .windows(2)
            .map(|w| (w[0].c_linearized - w[1].c_linearized) / w[0].c_linearized)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.trace {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_trace_csv(&self, path: &Path) -> Result<()> {
        self.write_trace_csv(std::fs::File::create(path)?)
    }
}

/// Iteration state; [`Optimizer::step`] performs one pass of linearize → rotate → update.
pub struct Optimizer<'a> {
    terms: &'a ChannelTerms,
    config: OptimizerConfig,
    z_i: TunableImpedance,
    lin: Linearization,
    trace: Vec<TracePoint>,
    best: (f64, usize, TunableImpedance),
}

/// Outcome of a single [`Optimizer::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Continue,
    Converged,
    Singular,
}

impl<'a> Optimizer<'a> {
    pub fn new(terms: &'a ChannelTerms, initial: TunableImpedance, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let lin = compute_linearization(terms, &initial, config.rcond_threshold)?;
        let g0 = lin.gain();
        Ok(Optimizer {
            terms,
            config,
            best: (g0, 0, initial.clone()),
            z_i: initial,
            lin,
            trace: vec![TracePoint {
                iteration: 0,
                c_linearized: g0,
                gain_exact: g0,
            }],
        })
    }

    pub fn current(&self) -> &TunableImpedance {
        &self.z_i
    }

    pub fn linearization(&self) -> &Linearization {
        &self.lin
    }

    pub fn trace(&self) -> &[TracePoint] {
        &self.trace
    }

    pub fn iteration(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let arch = self.z_i.architecture();
        let delta = self.config.delta;
        if self.config.neumann_guard {
            let scale = self.lin.neumann_scale(arch);
            if delta > 0.01 / scale {
                warn!(
                    "iteration {}: delta {delta:e} exceeds 1% of 1/(M̄‖(Z_II+Z_I)⁻¹‖∞) = {:e}",
                    self.iteration(),
                    1.0 / scale
                );
            }
        }
        let projected: Vec<Vec<Complex64>> = (0..arch.groups()).map(|g| self.lin.projected_row(arch, g)).collect();
        let omega = solve_increment(self.lin.a, &projected, delta);
        let c_next = predicted_objective(self.lin.a, &projected, &omega).norm_sqr();
        self.z_i = apply_update(&self.z_i, &omega)?;
        let l = self.trace.len();
        let c_prev = self.trace[l - 1].c_linearized;

        let next = compute_linearization(self.terms, &self.z_i, self.config.rcond_threshold);
        let gain_exact = next.as_ref().map(Linearization::gain).unwrap_or(f64::NAN);
        self.trace.push(TracePoint {
            iteration: l,
            c_linearized: c_next,
            gain_exact,
        });
        let lin = match next {
            Ok(lin) => lin,
            Err(Error::SingularMatrix { rcond, .. }) => {
                debug!("iteration {l}: singular Z_II + Z_I (rcond {rcond:e})");
                return Ok(StepOutcome::Singular);
            }
            Err(e) => return Err(e),
        };
        self.lin = lin;
        if gain_exact > self.best.0 {
            self.best = (gain_exact, l, self.z_i.clone());
        }
        if self.config.neumann_guard && c_next < c_prev * (1.0 - MONOTONE_SLACK) {
            return Err(Error::NonMonotoneBeyondSlack {
                iteration: l,
                previous: c_prev,
                current: c_next,
            });
        }
        if (c_next - c_prev).abs() <= self.config.relative_tolerance * c_prev {
            return Ok(StepOutcome::Converged);
        }
        Ok(StepOutcome::Continue)
    }

    pub fn run(mut self) -> Result<OptimizationResult> {
        let mut termination = Termination::MaxIter;
        while self.iteration() < self.config.max_iterations {
            match self.step()? {
                StepOutcome::Continue => {}
                StepOutcome::Converged => {
                    termination = Termination::Converged;
                    break;
                }
                StepOutcome::Singular => {
                    termination = Termination::Singular;
                    break;
                }
            }
        }
        let (_, best_iteration, z_i) = self.best;
        let gain = channel_gain(self.terms, &z_i)?;
        Ok(OptimizationResult {
            z_i,
            gain,
            best_iteration,
            iterations: self.trace.len() - 1,
            termination,
            trace: self.trace,
        })
    }
}

/// Runs the full algorithm from the coupling-unaware initial design.
pub fn optimize(terms: &ChannelTerms, arch: RisArchitecture, config: &OptimizerConfig) -> Result<OptimizationResult> {
    let init = init_no_mc(terms, arch)?;
    optimize_from(terms, init, config)
}

pub fn optimize_from(terms: &ChannelTerms, initial: TunableImpedance, config: &OptimizerConfig) -> Result<OptimizationResult> {
    Optimizer::new(terms, initial, *config)?.run()
}

/// Symmetry map for the architecture's group size (memoized).
pub fn symmetry_map_for(arch: RisArchitecture) -> std::sync::Arc<SymmetryMap> {
    build_symmetry_map(arch.group_size())
}
