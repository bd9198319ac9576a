//! `impulse`: solve, simulate, verify and export impulse-control problems.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 numerical failure. Errors are printed to stderr as one JSON
//! record.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use impulse_core::audit::audit_optimality;
use impulse_core::config::{load_config, spec_hash, ConfigError, Overrides, ProblemConfig, StrategyForm};
use impulse_core::diffusion::DiffusionError;
use impulse_core::fseries::{f_series, FSeriesError, TailKind};
use impulse_core::io::{self, IoError, Meta};
use impulse_core::montecarlo::{estimate_gain, run_episodes, summarize, tail_bound, McConfig, McError};
use impulse_core::parallel::{threads_from_env, with_threads, ParallelError};
use impulse_core::solver::SolverError;
use impulse_core::strategy::{HittingPolicy, Strategy, StrategyError};
use impulse_core::{extract_regions, QviSolver, ValidatedSpec, ValueFields};

#[derive(Parser)]
#[command(name = "impulse", version, about = "Optimal technology switching as impulse control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the value fields and impulse regions.
    Solve {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Simulate the configured strategy and estimate its gain.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Value CSV of a previous solve (needed for the optimal strategy).
        #[arg(long)]
        fields: Option<PathBuf>,
    },
    /// Check invariants, the optimality audit and the cadence recurrences.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Value CSV to check instead of solving afresh.
        #[arg(long)]
        fields: Option<PathBuf>,
    },
    /// Recompute the region CSV from a value CSV.
    Regions {
        #[arg(long)]
        fields: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write a wide plotting table from a value CSV.
    Export {
        #[arg(long)]
        fields: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    x_lo: Option<f64>,
    #[arg(long)]
    x_hi: Option<f64>,
    #[arg(long = "n")]
    n_points: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
}

impl RunArgs {
    fn load(&self) -> Result<Loaded, CliError> {
        let mut cfg = load_config(&self.config)?;
        cfg.apply(&Overrides {
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            n_points: self.n_points,
            dt: self.dt,
            tol: self.tol,
            seed: self.seed,
            n_paths: self.n_paths,
            horizon: self.horizon,
        });
        let spec = cfg.validated_spec()?;
        let hash = spec_hash(&spec);
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::usage("OutputDir", format!("{}: {e}", self.out.display())))?;
        Ok(Loaded { cfg, spec, hash, out: self.out.clone() })
    }
}

struct Loaded {
    cfg: ProblemConfig,
    spec: ValidatedSpec,
    hash: String,
    out: PathBuf,
}

impl Loaded {
    fn meta(&self) -> Meta {
        Meta::new(&self.hash)
    }

    fn solver(&self) -> Result<QviSolver<'_>, CliError> {
        Ok(QviSolver::new(&self.spec, self.cfg.grid()?, self.cfg.solver_config())?)
    }

    fn fields_from(&self, path: &Path) -> Result<ValueFields, CliError> {
        let (fields, meta) = io::read_values(path).map_err(|e| CliError::io(path, e))?;
        if meta.get("spec_hash") != Some(self.hash.as_str()) {
            return Err(CliError::usage(
                "SpecMismatch",
                format!("{} was produced for a different problem spec", path.display()),
            ));
        }
        Ok(fields)
    }
}

#[derive(Debug, Serialize)]
struct ErrorRecord {
    error: String,
    message: String,
    exit_code: u8,
}

#[derive(Debug)]
struct CliError {
    kind: String,
    message: String,
    code: u8,
}

impl CliError {
    fn usage(kind: &str, message: impl Into<String>) -> Self {
        CliError { kind: kind.into(), message: message.into(), code: 2 }
    }

    fn numerical(kind: &str, message: impl Into<String>) -> Self {
        CliError { kind: kind.into(), message: message.into(), code: 3 }
    }

    fn io(path: &Path, e: IoError) -> Self {
        match &e {
            IoError::Io(inner) if inner.kind() == std::io::ErrorKind::NotFound => {
                CliError::usage("FileNotFound", path.display().to_string())
            }
            _ => CliError::usage("ArtifactError", format!("{}: {e}", path.display())),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match &e {
            ConfigError::FileNotFound(_) => "FileNotFound",
            ConfigError::Io { .. } => "IoError",
            ConfigError::Parse(_) => "ParseError",
            ConfigError::Invalid(_) => "InvalidConfig",
            ConfigError::Validation(_) => "ValidationError",
            ConfigError::Grid(_) => "InvalidGrid",
        };
        CliError::usage(kind, e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        let kind = match &e {
            SolverError::NoConvergence { .. } => "NoConvergence",
            SolverError::Diverged { .. } => "Diverged",
            SolverError::NegativeVolatility { .. } => "NegativeVolatility",
            SolverError::ShapeMismatch => "ShapeMismatch",
        };
        CliError::numerical(kind, e.to_string())
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        match &e {
            StrategyError::Diffusion(DiffusionError::GridEscape { .. }) => {
                CliError::numerical("GridEscape", e.to_string())
            }
            StrategyError::Diffusion(_) => CliError::numerical("DiffusionError", e.to_string()),
            StrategyError::StateOutOfGrid { .. } => CliError::numerical("StateOutOfGrid", e.to_string()),
            StrategyError::UnreachableRegime { .. } => CliError::usage("UnreachableRegime", e.to_string()),
            _ => CliError::usage("InvalidStrategy", e.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::InsufficientPaths(_) => CliError::usage("InsufficientPaths", e.to_string()),
            McError::Episode { path_id, source } => {
                let mut err = CliError::from(source);
                err.message = format!("episode {path_id}: {}", err.message);
                err
            }
        }
    }
}

impl From<FSeriesError> for CliError {
    fn from(e: FSeriesError) -> Self {
        match &e {
            FSeriesError::UnboundedTailBound { .. } => CliError::numerical("UnboundedTailBound", e.to_string()),
            FSeriesError::UnsupportedDynamics => CliError::usage("UnsupportedDynamics", e.to_string()),
            FSeriesError::InvalidCadence(_) => CliError::usage("InvalidCadence", e.to_string()),
        }
    }
}

impl From<ParallelError> for CliError {
    fn from(e: ParallelError) -> Self {
        CliError::usage("ThreadConfig", e.to_string())
    }
}

fn write(path: PathBuf, r: Result<(), IoError>) -> Result<(), CliError> {
    r.map_err(|e| CliError::io(&path, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    spec_hash: &'a str,
    x_lo: f64,
    x_hi: f64,
    n_points: usize,
    dt: f64,
    tol: f64,
    iterations: usize,
    residual: f64,
    epsilon: f64,
    wall_time_s: f64,
    outputs: Vec<&'a str>,
}

fn cmd_solve(run: &RunArgs) -> Result<u8, CliError> {
    let started = Instant::now();
    let ld = run.load()?;
    let solver = ld.solver()?;
    let fields = solver.solve()?;
    let eps = ld.cfg.solve.epsilon;
    let region = extract_regions(&fields, eps);
    let meta = ld.meta().with_fields(&fields);
    write(ld.out.join("values.csv"), io::write_values(&ld.out.join("values.csv"), &fields, &meta))?;
    write(ld.out.join("regions.csv"), io::write_regions(&ld.out.join("regions.csv"), &region, &meta))?;
    let manifest = Manifest {
        command: "solve",
        tool_version: io::TOOL_VERSION,
        spec_hash: &ld.hash,
        x_lo: fields.grid.x_lo,
        x_hi: fields.grid.x_hi,
        n_points: fields.grid.n_points,
        dt: fields.grid.dt,
        tol: fields.tol,
        iterations: fields.iterations,
        residual: fields.residual,
        epsilon: eps,
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs: vec!["values.csv", "regions.csv"],
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(ld.out.join("manifest.json"), text + "\n").map_err(|e| CliError::usage("IoError", e.to_string()))?;
    println!(
        "solved: {} sweeps, residual {:e}, {} grid points per regime",
        fields.iterations, fields.residual, fields.grid.n_points
    );
    Ok(0)
}

fn build_strategy(ld: &Loaded, fields: Option<&Path>) -> Result<Strategy, CliError> {
    let s = &ld.cfg.strategy;
    let strategy = match s.kind {
        StrategyForm::None => Strategy::no_impulse(),
        StrategyForm::Cadence => Strategy::fixed_cadence(&ld.spec, s.t0, s.m)?,
        StrategyForm::Optimal => {
            let path = fields.ok_or_else(|| {
                CliError::usage("MissingFields", "the optimal strategy needs --fields from a previous solve")
            })?;
            let fields = ld.fields_from(path)?;
            let region = extract_regions(&fields, ld.cfg.solve.epsilon);
            Strategy::optimal(HittingPolicy::new(region, &fields)?.with_m_offset(s.m_offset))
        }
    };
    Ok(strategy.with_max_impulses(ld.cfg.mc.n_max_impulses))
}

fn cmd_simulate(run: &RunArgs, fields: Option<&Path>) -> Result<u8, CliError> {
    let ld = run.load()?;
    let strategy = build_strategy(&ld, fields)?;
    let mc = ld.cfg.mc_config();
    if mc.n_paths < 2 {
        return Err(McError::InsufficientPaths(mc.n_paths).into());
    }
    let start = ld.cfg.start()?;
    let traces = run_episodes(&strategy, &ld.spec, start, &mc)?;
    let est = summarize(&traces, &mc, tail_bound(&strategy, &ld.spec, start.1, mc.horizon));
    let meta = ld
        .meta()
        .with("seed", mc.seed)
        .with("start_regime", start.0 .0)
        .with("start_x", start.1)
        .with("mc_dt", mc.dt)
        .with("horizon", mc.horizon);
    let label = format!("{:?}", ld.cfg.strategy.kind).to_lowercase();
    let out = &ld.out;
    write(out.join("traces.csv"), io::write_traces(&out.join("traces.csv"), &traces, &meta))?;
    write(out.join("episodes.csv"), io::write_episodes(&out.join("episodes.csv"), &traces, &meta))?;
    write(out.join("gain.csv"), io::write_gains(&out.join("gain.csv"), &[(label, est.clone())], &meta))?;
    if mc.record_paths > 0 {
        let recorded = &traces[..mc.record_paths.min(traces.len())];
        write(out.join("paths.csv"), io::write_paths(&out.join("paths.csv"), recorded, &meta))?;
    }
    println!("gain {} ± {} (tail ≤ {:e}, {} paths)", est.mean, est.stderr, est.tail_bound, est.n_paths);
    Ok(0)
}

struct Report {
    rows: Vec<(String, f64, f64, bool)>,
}

impl Report {
    fn check(&mut self, name: &str, value: f64, threshold: f64, pass: bool) {
        self.rows.push((name.to_string(), value, threshold, pass));
    }

    fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.3)
    }
}

fn cmd_verify(run: &RunArgs, fields_path: Option<&Path>) -> Result<u8, CliError> {
    let ld = run.load()?;
    let solver = ld.solver()?;
    let fields = match fields_path {
        Some(p) => ld.fields_from(p)?,
        None => solver.solve()?,
    };
    if fields.grid != *solver.grid() {
        return Err(CliError::usage("GridMismatch", "value CSV grid differs from the configured grid"));
    }
    let cfg = solver.config();
    let (tol, tol_c) = (cfg.tol, cfg.tol_c());
    let mut report = Report { rows: Vec::new() };

    let inv = solver.invariants(&fields)?;
    report.check("rho_is_max", inv.max_rho_mismatch, 0.0, inv.rho_is_max());
    report.check("dominates_no_impulse", inv.min_dominance_gap, -tol, inv.dominates_no_impulse(tol));
    report.check("rho_plus_positive", inv.min_rho_plus, 0.0, inv.positive());
    report.check("complementarity", inv.complementarity.max_abs_min, tol_c, inv.complementarity.within(tol_c));
    report.check("region_partition", if inv.partition_ok { 1.0 } else { 0.0 }, 1.0, inv.partition_ok);
    report.check("dirac_consistency", inv.max_dirac_gap, inv.dirac_tolerance(), inv.dirac_consistent());

    let region = extract_regions(&fields, ld.cfg.solve.epsilon);
    let audit = audit_optimality(&solver, &fields, &region, &ld.cfg.audit_config());
    report.check("kernel_inequality", audit.max_kernel_violation, tol_c, audit.kernel_ok());
    report.check("r_star_equality", audit.max_r_star_gap, tol_c, audit.r_star_ok());
    report.check("stopping_inequality", audit.max_stopping_violation, tol_c, audit.stopping_ok());
    report.check("t_star_equality", audit.max_t_star_gap, tol_c, audit.t_star_ok());
    write(ld.out.join("audit.csv"), io::write_audit(&ld.out.join("audit.csv"), &audit, &ld.meta()))?;

    if ld.spec.has_constant_coefficients() {
        let fc = &ld.cfg.fseries;
        let start = ld.cfg.start()?;
        let fs = match f_series(&ld.spec, start, fc.t0, fc.m, fc.order, &ld.cfg.fseries_config()) {
            Ok(fs) => fs,
            Err(FSeriesError::UnboundedTailBound { ratio }) => {
                report.check("fseries_growth_ratio", ratio, 1.0, false);
                return write_report(&ld, &report);
            }
            Err(e) => return Err(e.into()),
        };
        match fs.tail_kind {
            TailKind::Geometric => {
                let n = fs.majorant_violations().len();
                report.check("fseries_majorants", n as f64, 0.0, n == 0);
            }
            TailKind::Growth => {
                report.check("fseries_growth_tail", fs.tail_bound, f64::INFINITY, fs.tail_bound.is_finite());
            }
        }
        let mc = McConfig { horizon: (fc.order + 1) as f64 * fc.t0, ..ld.cfg.mc_config() };
        let cadence = Strategy::fixed_cadence(&ld.spec, fc.t0, fc.m)?.with_max_impulses(fc.order.max(1));
        let est = estimate_gain(&cadence, &ld.spec, start, &mc)?;
        let allowed = 3.0 * est.stderr + fs.tail_bound + est.tail_bound;
        let diff = (est.mean - fs.partial_sum).abs();
        report.check("fseries_vs_mc", diff, allowed, diff <= allowed);
        write(ld.out.join("fseries.csv"), io::write_fseries(&ld.out.join("fseries.csv"), &fs, &ld.meta()))?;
    }

    write_report(&ld, &report)
}

fn write_report(ld: &Loaded, report: &Report) -> Result<u8, CliError> {
    let mut text = String::from("check,value,threshold,pass\n");
    for (name, v, t, p) in &report.rows {
        text.push_str(&format!("{name},{v},{t},{p}\n"));
        println!("{} {name}: {v:e} (threshold {t:e})", if *p { "PASS" } else { "FAIL" });
    }
    let header = format!("# tool_version = {}\n# spec_hash = {}\n", io::TOOL_VERSION, ld.hash);
    fs::write(ld.out.join("verify.csv"), header + &text).map_err(|e| CliError::usage("IoError", e.to_string()))?;
    Ok(if report.passed() { 0 } else { 1 })
}

fn load_fields_only(path: &Path) -> Result<(ValueFields, Meta), CliError> {
    io::read_values(path).map_err(|e| CliError::io(path, e))
}

fn cmd_regions(fields: &Path, epsilon: f64, out: &Path) -> Result<u8, CliError> {
    let (fields, meta) = load_fields_only(fields)?;
    fs::create_dir_all(out).map_err(|e| CliError::usage("OutputDir", e.to_string()))?;
    let region = extract_regions(&fields, epsilon);
    let meta = Meta::new(meta.get("spec_hash").unwrap_or("unknown"));
    write(out.join("regions.csv"), io::write_regions(&out.join("regions.csv"), &region, &meta))?;
    Ok(0)
}

fn cmd_export(fields: &Path, epsilon: f64, out: &Path) -> Result<u8, CliError> {
    let (fields, meta) = load_fields_only(fields)?;
    fs::create_dir_all(out).map_err(|e| CliError::usage("OutputDir", e.to_string()))?;
    let region = extract_regions(&fields, epsilon);
    let meta = Meta::new(meta.get("spec_hash").unwrap_or("unknown"));
    write(out.join("plot.csv"), io::write_plot(&out.join("plot.csv"), &fields, &region, &meta))?;
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    let threads = threads_from_env()?;
    with_threads(threads, move || match &cli.command {
        Command::Solve { run } => cmd_solve(run),
        Command::Simulate { run, fields } => cmd_simulate(run, fields.as_deref()),
        Command::Verify { run, fields } => cmd_verify(run, fields.as_deref()),
        Command::Regions { fields, epsilon, out } => cmd_regions(fields, *epsilon, out),
        Command::Export { fields, epsilon, out } => cmd_export(fields, *epsilon, out),
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let rec = ErrorRecord { error: e.kind, message: e.message, exit_code: e.code };
            eprintln!("{}", serde_json::to_string(&rec).expect("error record serializes"));
            ExitCode::from(rec.exit_code)
        }
    }
}
