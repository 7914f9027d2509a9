//! `bdris`: build scenarios, run single optimizations and the sweep pipelines.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bdris_core::experiment::{
    load_or_build, load_scenario_config, sweep_convergence, sweep_gain, write_csv, write_json, ScenarioSummary,
    DEFAULT_CONVERGENCE_SPACINGS, DEFAULT_GAIN_SIZES, DEFAULT_GROUP_SIZE,
};
use bdris_core::optimizer::{DEFAULT_DELTA, DEFAULT_MAX_ITERATIONS, DEFAULT_RELATIVE_TOLERANCE};
use bdris_core::{
    channel_gain, decouple, optimize, ArchRule, CouplingMode, Error, OptimizerConfig, RisArchitecture, RunRecord,
    ScenarioCache, ScenarioConfig, SweepSpec, Termination,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const EXIT_MAX_ITER: u8 = 2;
const EXIT_SINGULAR: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "bdris", version, about = "Mutual-coupling-aware BD-RIS optimization")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build (or load from cache) the channel terms and print a summary.
    Scenario(ScenarioArgs),
    /// Run one optimization.
    Optimize(OptimizeArgs),
    /// Gain-versus-iteration traces for several spacings and architectures.
    SweepConvergence(SweepArgs),
    /// Converged gain versus surface size, spacing, architecture and coupling mode.
    SweepGain(SweepArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    quadrature_order: Option<usize>,
    /// Always recompute the channel terms.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args, Debug)]
struct OptimizerArgs {
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Relative change of the gain that stops the iteration.
    #[arg(long, default_value_t = DEFAULT_RELATIVE_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iter: usize,
    /// Warn when the step is large for the local inverse and fail on non-monotone traces.
    #[arg(long)]
    neumann_guard: bool,
}

impl OptimizerArgs {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            delta: self.delta,
            max_iterations: self.max_iter,
            relative_tolerance: self.tol,
            neumann_guard: self.neumann_guard,
            ..OptimizerConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of surface elements.
    #[arg(long)]
    m: Option<usize>,
    /// Element spacing as a fraction of the wavelength.
    #[arg(long)]
    d: Option<f64>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    #[arg(long)]
    m: Option<usize>,
    /// Number of groups (1 = fully connected, M = single connected).
    #[arg(long)]
    g: Option<usize>,
    #[arg(long)]
    d: Option<f64>,
    /// Design against the diagonal of Z_II only (evaluated with full coupling).
    #[arg(long)]
    without_mc: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    /// Surface sizes (repeatable). The convergence sweep uses the first.
    #[arg(long)]
    m: Vec<usize>,
    /// Spacings as fractions of the wavelength (repeatable).
    #[arg(long)]
    d: Vec<f64>,
    /// Group size of the group-connected architecture.
    #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
    group_size: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::InvalidConfig(_) | Error::InvalidArchitecture(_)));
            ExitCode::from(if usage { EXIT_USAGE } else { 1 })
        }
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Scenario(a) => cmd_scenario(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::SweepConvergence(a) => cmd_sweep_convergence(a),
        Command::SweepGain(a) => cmd_sweep_gain(a),
    }
}

fn base_config(common: &CommonArgs) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_scenario_config(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(q) = common.quadrature_order {
        cfg.quadrature_order = q;
    }
    Ok(cfg)
}

fn cache(common: &CommonArgs) -> Option<ScenarioCache> {
    (!common.no_cache).then(ScenarioCache::from_env)
}

/// Applies `--m`/`--d`, dropping an explicit grid that no longer fits.
fn resize(cfg: &mut ScenarioConfig, m: Option<usize>, d: Option<f64>) {
    if let Some(m) = m {
        if m != cfg.m {
            cfg.grid = None;
        }
        cfg.m = m;
        if cfg.group_size == 0 || m % cfg.group_size != 0 {
            cfg.group_size = 1;
        }
    }
    if let Some(d) = d {
        cfg.spacing_over_lambda = d;
    }
}

fn ensure_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_scenario(a: ScenarioArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = base_config(&a.common)?;
    resize(&mut cfg, a.m, a.d);
    cfg.validate()?;
    let terms = load_or_build(&cfg, cache(&a.common).as_ref())?;
    let summary = ScenarioSummary::new(&cfg, &terms)?;
    match a.common.format {
        Format::Csv => println!("{summary}"),
        Format::Json => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    if a.common.out != Path::new(".") {
        ensure_out(&a.common.out)?;
        write_json(&a.common.out.join("terms.json"), &terms)?;
        write_json(&a.common.out.join("scenario.json"), &summary)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_optimize(a: OptimizeArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = base_config(&a.common)?;
    resize(&mut cfg, a.m, a.d);
    cfg.validate()?;
    let arch = RisArchitecture::new(cfg.m, a.g.unwrap_or(cfg.m / cfg.group_size))?;
    let opt = a.optimizer.config();
    opt.validate()?;
    let terms = load_or_build(&cfg, cache(&a.common).as_ref())?;

    let start = std::time::Instant::now();
    let mode = if a.without_mc { CouplingMode::WithoutMc } else { CouplingMode::WithMc };
    let result = match mode {
        CouplingMode::WithMc => optimize(&terms, arch, &opt)?,
        CouplingMode::WithoutMc => optimize(&decouple(&terms), arch, &opt)?,
    };
    let gain = channel_gain(&terms, &result.z_i)?;
    let record = RunRecord {
        scenario_hash: cfg.content_hash(),
        m: cfg.m,
        d_over_lambda: cfg.spacing_over_lambda,
        arch: arch.topology().label().to_string(),
        mode,
        gain,
        iterations: result.iterations,
        termination: result.termination,
        wall_time_s: start.elapsed().as_secs_f64(),
    };

    ensure_out(&a.common.out)?;
    match a.common.format {
        Format::Csv => result.save_trace_csv(&a.common.out.join("trace.csv"))?,
        Format::Json => write_json(&a.common.out.join("trace.json"), &result.trace)?,
    }
    write_json(&a.common.out.join("result.json"), &json!({ "record": record, "result": result }))?;
    println!(
        "{arch}: gain {gain:.6e} after {} iterations ({})",
        result.iterations,
        result.termination.label()
    );
    Ok(match result.termination {
        Termination::Converged => ExitCode::SUCCESS,
        Termination::MaxIter => ExitCode::from(EXIT_MAX_ITER),
        Termination::Singular => ExitCode::from(EXIT_SINGULAR),
    })
}

fn sweep_rules(group_size: usize) -> Vec<ArchRule> {
    vec![ArchRule::Single, ArchRule::Group(group_size), ArchRule::Fully]
}

fn finish<R: serde::Serialize>(
    out: &Path,
    format: Format,
    stem: &str,
    rows: &[R],
    records: &[RunRecord],
    failures: &[String],
) -> anyhow::Result<ExitCode> {
    ensure_out(out)?;
    match format {
        Format::Csv => write_csv(&out.join(format!("{stem}.csv")), rows)?,
        Format::Json => write_json(&out.join(format!("{stem}.json")), rows)?,
    }
    write_json(&out.join(format!("{stem}_runs.json")), records)?;
    for f in failures {
        eprintln!("run failed: {f}");
    }
    println!("{} runs, {} rows written to {}", records.len(), rows.len(), out.display());
    Ok(if failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn sweep_inputs(a: &SweepArgs) -> anyhow::Result<(ScenarioConfig, OptimizerConfig, Vec<f64>)> {
    let cfg = base_config(&a.common)?;
    let opt = a.optimizer.config();
    opt.validate()?;
    if a.group_size == 0 {
        return Err(Error::InvalidConfig("group size must be positive".into()).into());
    }
    let d = if a.d.is_empty() { DEFAULT_CONVERGENCE_SPACINGS.to_vec() } else { a.d.clone() };
    if let Some(bad) = d.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidConfig(format!("spacing must be positive, got {bad}")).into());
    }
    Ok((cfg, opt, d))
}

fn cmd_sweep_convergence(a: SweepArgs) -> anyhow::Result<ExitCode> {
    let (mut cfg, opt, d) = sweep_inputs(&a)?;
    if let Some(&m) = a.m.first() {
        resize(&mut cfg, Some(m), None);
    }
    cfg.validate()?;
    let out = sweep_convergence(&cfg, &d, &sweep_rules(a.group_size), &opt, cache(&a.common).as_ref());
    finish(&a.common.out, a.common.format, "convergence", &out.rows, &out.records, &out.failures)
}

fn cmd_sweep_gain(a: SweepArgs) -> anyhow::Result<ExitCode> {
    let (cfg, opt, d) = sweep_inputs(&a)?;
    let spec = SweepSpec {
        m_values: if a.m.is_empty() { DEFAULT_GAIN_SIZES.to_vec() } else { a.m.clone() },
        d_values: d,
        architectures: sweep_rules(a.group_size),
        modes: vec![CouplingMode::WithMc, CouplingMode::WithoutMc],
    };
    if spec.m_values.contains(&0) {
        return Err(Error::InvalidConfig("surface size must be positive".into()).into());
    }
    let out = sweep_gain(&cfg, &spec, &opt, cache(&a.common).as_ref());
    finish(&a.common.out, a.common.format, "gain", &out.rows, &out.records, &out.failures)
}
