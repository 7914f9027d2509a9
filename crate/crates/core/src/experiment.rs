//! Scenario caching and the sweep pipelines behind the command-line tool.

use std::cmp::Ordering;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architecture::RisArchitecture;
use crate::em::{build_scenario, decouple, ScenarioConfig};
use crate::error::{Error, Result};
use crate::network::{channel_gain, ChannelTerms};
use crate::optimizer::{optimize, OptimizationResult, OptimizerConfig, Termination};

/// Environment variable overriding the cache directory.
pub const CACHE_DIR_ENV: &str = "BDRIS_CACHE_DIR";

pub const DEFAULT_CONVERGENCE_SPACINGS: [f64; 3] = [0.5, 0.25, 0.125];
pub const DEFAULT_GAIN_SIZES: [usize; 5] = [4, 9, 16, 25, 36];
pub const DEFAULT_GROUP_SIZE: usize = 4;

/// Reads a scenario from a TOML file. Errors name the file and the offending key.
pub fn load_scenario_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ScenarioConfig =
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    config
        .validate()
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    Ok(config)
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    config: ScenarioConfig,
    terms: ChannelTerms,
}

/// JSON files of channel terms keyed by [`ScenarioConfig::content_hash`].
#[derive(Clone, Debug)]
pub struct ScenarioCache {
    dir: PathBuf,
}

impl ScenarioCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ScenarioCache { dir: dir.into() }
    }

    /// `$BDRIS_CACHE_DIR`, else the user cache directory, else the temp directory.
    pub fn from_env() -> Self {
        if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
            return Self::new(dir);
        }
        let base = std::env::var_os("XDG_CACHE_HOME")
            .map(PathBuf::from)
            .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache")))
            .unwrap_or_else(std::env::temp_dir);
        Self::new(base.join("bdris"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, config: &ScenarioConfig) -> PathBuf {
        self.dir.join(format!("{}.json", config.content_hash()))
    }

    /// Cached terms, if present and written for exactly this configuration.
    pub fn load(&self, config: &ScenarioConfig) -> Option<ChannelTerms> {
        let path = self.path_for(config);
        let text = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) if entry.config == *config => Some(entry.terms),
            Ok(_) => {
                warn!("cache entry {} belongs to another configuration; ignoring", path.display());
                None
            }
            Err(e) => {
                warn!("unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn store(&self, config: &ScenarioConfig, terms: &ChannelTerms) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path_for(config);
        let tmp = path.with_extension(format!("json.{}.tmp", std::process::id()));
        let entry = CacheEntry {
            config: config.clone(),
            terms: terms.clone(),
        };
        std::fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

/// Builds the channel terms, going through the cache when one is given.
pub fn load_or_build(config: &ScenarioConfig, cache: Option<&ScenarioCache>) -> Result<ChannelTerms> {
    if let Some(terms) = cache.and_then(|c| c.load(config)) {
        debug!("cache hit for {}", config.content_hash());
        return Ok(terms);
    }
    let terms = build_scenario(config)?;
    if let Some(c) = cache {
        match c.store(config, &terms) {
            Ok(p) => debug!("cached channel terms at {}", p.display()),
            Err(e) => warn!("could not write cache: {e}"),
        }
    }
    Ok(terms)
}

/// Printable facts about a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub hash: String,
    pub m: usize,
    pub wavelength_m: f64,
    pub rows: usize,
    pub cols: usize,
    pub max_offdiag_abs: f64,
    pub diag_re_min: f64,
    pub diag_re_max: f64,
    pub diag_im_min: f64,
    pub diag_im_max: f64,
}

impl ScenarioSummary {
    pub fn new(config: &ScenarioConfig, terms: &ChannelTerms) -> Result<Self> {
        let m = terms.elements();
        let layout = config.layout();
        let diag: Vec<_> = (0..m).map(|i| terms.z_ii[(i, i)]).collect();
        let fold = |f: fn(f64, f64) -> f64, init: f64, g: fn(&num_complex::Complex64) -> f64| {
            diag.iter().map(g).fold(init, f)
        };
        let max_offdiag_abs = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| terms.z_ii[(i, j)].norm())
            .fold(0.0, f64::max);
        Ok(ScenarioSummary {
            hash: config.content_hash(),
            m,
            wavelength_m: config.constants()?.wavelength,
            rows: layout.rows,
            cols: layout.cols,
            max_offdiag_abs,
            diag_re_min: fold(f64::min, f64::INFINITY, |z| z.re),
            diag_re_max: fold(f64::max, f64::NEG_INFINITY, |z| z.re),
            diag_im_min: fold(f64::min, f64::INFINITY, |z| z.im),
            diag_im_max: fold(f64::max, f64::NEG_INFINITY, |z| z.im),
        })
    }
}

impl fmt::Display for ScenarioSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}", self.hash)?;
        writeln!(f, "  wavelength      {:.6e} m", self.wavelength_m)?;
        writeln!(f, "  elements        {} ({}x{} grid)", self.m, self.rows, self.cols)?;
        writeln!(f, "  Re diag Z_II    [{:.6e}, {:.6e}] ohm", self.diag_re_min, self.diag_re_max)?;
        writeln!(f, "  Im diag Z_II    [{:.6e}, {:.6e}] ohm", self.diag_im_min, self.diag_im_max)?;
        write!(f, "  max |offdiag|   {:.6e} ohm", self.max_offdiag_abs)
    }
}

/// How the group structure follows the surface size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchRule {
    Single,
    /// Groups of this many elements.
    Group(usize),
    Fully,
}

impl ArchRule {
    pub fn label(self) -> &'static str {
        match self {
            ArchRule::Single => "SC",
            ArchRule::Group(_) => "GC",
            ArchRule::Fully => "FC",
        }
    }

    /// `None` when the group size does not divide `m`.
    pub fn resolve(self, m: usize) -> Option<RisArchitecture> {
        match self {
            ArchRule::Single => RisArchitecture::single_connected(m).ok(),
            ArchRule::Group(s) => RisArchitecture::with_group_size(m, s).ok(),
            ArchRule::Fully => RisArchitecture::fully_connected(m).ok(),
        }
    }

    pub fn defaults() -> Vec<ArchRule> {
        vec![ArchRule::Single, ArchRule::Group(DEFAULT_GROUP_SIZE), ArchRule::Fully]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Design against the full `Z_II`.
    WithMc,
    /// Design against the diagonal of `Z_II`, evaluate against the full matrix.
    WithoutMc,
}

impl CouplingMode {
    pub fn label(self) -> &'static str {
        match self {
            CouplingMode::WithMc => "with_mc",
            CouplingMode::WithoutMc => "without_mc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub m_values: Vec<usize>,
    pub d_values: Vec<f64>,
    pub architectures: Vec<ArchRule>,
    pub modes: Vec<CouplingMode>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            m_values: DEFAULT_GAIN_SIZES.to_vec(),
            d_values: DEFAULT_CONVERGENCE_SPACINGS.to_vec(),
            architectures: ArchRule::defaults(),
            modes: vec![CouplingMode::WithMc, CouplingMode::WithoutMc],
        }
    }
}

/// One optimization run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_hash: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub d_over_lambda: f64,
    pub arch: String,
    pub mode: CouplingMode,
    pub gain: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub d_over_lambda: f64,
    pub arch: String,
    pub iteration: usize,
    pub c_linearized: f64,
    pub gain_exact: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub d_over_lambda: f64,
    pub arch: String,
    pub mode: CouplingMode,
    pub gain: f64,
}

/// Rows from the runs that finished, plus a message per failed run.
#[derive(Clone, Debug)]
pub struct SweepOutput<R> {
    pub rows: Vec<R>,
    pub records: Vec<RunRecord>,
    pub failures: Vec<String>,
}

impl<R> Default for SweepOutput<R> {
    fn default() -> Self {
        SweepOutput {
            rows: Vec::new(),
            records: Vec::new(),
            failures: Vec::new(),
        }
    }
}

fn arch_rank(label: &str) -> usize {
    ["SC", "GC", "FC"].iter().position(|l| *l == label).unwrap_or(usize::MAX)
}

fn scenario_for(base: &ScenarioConfig, m: usize, d: f64) -> ScenarioConfig {
    let mut cfg = base.clone();
    if cfg.m != m {
        cfg.grid = None;
    }
    cfg.m = m;
    cfg.spacing_over_lambda = d;
    if cfg.group_size == 0 || m % cfg.group_size != 0 {
        cfg.group_size = 1;
    }
    cfg
}

/// Builds every `(m, d)` scenario once, in parallel.
fn build_all(
    base: &ScenarioConfig,
    points: &[(usize, f64)],
    cache: Option<&ScenarioCache>,
) -> Vec<((usize, f64), Result<(String, ChannelTerms)>)> {
    points
        .par_iter()
        .map(|&(m, d)| {
            let cfg = scenario_for(base, m, d);
            ((m, d), load_or_build(&cfg, cache).map(|t| (cfg.content_hash(), t)))
        })
        .collect()
}

struct Job<'a> {
    hash: &'a str,
    terms: &'a ChannelTerms,
    m: usize,
    d: f64,
    rule: ArchRule,
    arch: RisArchitecture,
    mode: CouplingMode,
}

fn run_job(job: &Job<'_>, config: &OptimizerConfig) -> Result<(RunRecord, OptimizationResult)> {
    let start = Instant::now();
    let (result, gain) = match job.mode {
        CouplingMode::WithMc => {
            let r = optimize(job.terms, job.arch, config)?;
            let g = r.gain;
            (r, g)
        }
        CouplingMode::WithoutMc => {
            let r = optimize(&decouple(job.terms), job.arch, config)?;
            let g = channel_gain(job.terms, &r.z_i)?;
            (r, g)
        }
    };
    let record = RunRecord {
        scenario_hash: job.hash.to_string(),
        m: job.m,
        d_over_lambda: job.d,
        arch: job.rule.label().to_string(),
        mode: job.mode,
        gain,
        iterations: result.iterations,
        termination: result.termination,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    info!(
        "M={} d={} {} {}: gain {:.6e} after {} iterations ({})",
        job.m,
        job.d,
        record.arch,
        job.mode.label(),
        gain,
        result.iterations,
        result.termination.label()
    );
    Ok((record, result))
}

fn plan<'a>(
    built: &'a [((usize, f64), Result<(String, ChannelTerms)>)],
    rules: &[ArchRule],
    modes: &[CouplingMode],
    failures: &mut Vec<String>,
) -> Vec<Job<'a>> {
    let mut jobs = Vec::new();
    for ((m, d), scenario) in built {
        let (hash, terms) = match scenario {
            Ok((h, t)) => (h.as_str(), t),
            Err(e) => {
                failures.push(format!("M={m} d={d}: {e}"));
                continue;
            }
        };
        for &rule in rules {
            let Some(arch) = rule.resolve(*m) else {
                warn!("skipping {} for M={m}: group size does not divide M", rule.label());
                continue;
            };
            for &mode in modes {
                jobs.push(Job {
                    hash,
                    terms,
                    m: *m,
                    d: *d,
                    rule,
                    arch,
                    mode,
                });
            }
        }
    }
    jobs
}

fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        (a.m, arch_rank(&a.arch), a.mode)
            .cmp(&(b.m, arch_rank(&b.arch), b.mode))
            .then(a.d_over_lambda.total_cmp(&b.d_over_lambda).reverse())
    });
}

/// Gain traces for every `(d, architecture)` at the base surface size.
pub fn sweep_convergence(
    base: &ScenarioConfig,
    d_values: &[f64],
    rules: &[ArchRule],
    config: &OptimizerConfig,
    cache: Option<&ScenarioCache>,
) -> SweepOutput<TraceRow> {
    let points: Vec<(usize, f64)> = d_values.iter().map(|&d| (base.m, d)).collect();
    let built = build_all(base, &points, cache);
    let mut out = SweepOutput::default();
    let jobs = plan(&built, rules, &[CouplingMode::WithMc], &mut out.failures);
    let results: Vec<_> = jobs.par_iter().map(|j| (j, run_job(j, config))).collect();
    for (job, r) in results {
        match r {
            Ok((record, result)) => {
                out.rows.extend(result.trace.iter().map(|p| TraceRow {
                    d_over_lambda: job.d,
                    arch: record.arch.clone(),
                    iteration: p.iteration,
                    c_linearized: p.c_linearized,
                    gain_exact: p.gain_exact,
                }));
                out.records.push(record);
            }
            Err(e) => out.failures.push(format!("d={} {}: {e}", job.d, job.rule.label())),
        }
    }
    out.rows.sort_by(|a, b| {
        b.d_over_lambda
            .total_cmp(&a.d_over_lambda)
            .then(arch_rank(&a.arch).cmp(&arch_rank(&b.arch)))
            .then(a.iteration.cmp(&b.iteration))
    });
    sort_records(&mut out.records);
    out
}

/// Converged gains over surface sizes, spacings, architectures and coupling modes.
pub fn sweep_gain(
    base: &ScenarioConfig,
    spec: &SweepSpec,
    config: &OptimizerConfig,
    cache: Option<&ScenarioCache>,
) -> SweepOutput<GainRow> {
    let points: Vec<(usize, f64)> = spec
        .m_values
        .iter()
        .flat_map(|&m| spec.d_values.iter().map(move |&d| (m, d)))
        .collect();
    let built = build_all(base, &points, cache);
    let mut out = SweepOutput::default();
    let jobs = plan(&built, &spec.architectures, &spec.modes, &mut out.failures);
    let results: Vec<_> = jobs.par_iter().map(|j| (j, run_job(j, config))).collect();
    for (job, r) in results {
        match r {
            Ok((record, _)) => {
                out.rows.push(GainRow {
                    m: record.m,
                    d_over_lambda: record.d_over_lambda,
                    arch: record.arch.clone(),
                    mode: record.mode,
                    gain: record.gain,
                });
                out.records.push(record);
            }
            Err(e) => out
                .failures
                .push(format!("M={} d={} {} {}: {e}", job.m, job.d, job.rule.label(), job.mode.label())),
        }
    }
    out.rows.sort_by(|a, b| {
        a.m.cmp(&b.m)
            .then(b.d_over_lambda.total_cmp(&a.d_over_lambda))
            .then(arch_rank(&a.arch).cmp(&arch_rank(&b.arch)))
            .then(a.mode.cmp(&b.mode))
    });
    sort_records(&mut out.records);
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

/// Largest relative drop of `c_linearized` between consecutive rows of the same trace.
pub fn worst_trace_drop(rows: &[TraceRow]) -> f64 {
    rows.windows(2)
        .filter(|w| w[0].arch == w[1].arch && w[0].d_over_lambda == w[1].d_over_lambda)
        .map(|w| (w[0].c_linearized - w[1].c_linearized) / w[0].c_linearized)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Gain of a row matching `(m, d, arch, mode)`.
pub fn lookup_gain(rows: &[GainRow], m: usize, d: f64, arch: &str, mode: CouplingMode) -> Option<f64> {
    rows.iter()
        .find(|r| r.m == m && r.d_over_lambda.total_cmp(&d) == Ordering::Equal && r.arch == arch && r.mode == mode)
        .map(|r| r.gain)
}
