#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use perk::accounting::{time_rhs_per_cell, CostReport};
use perk::analysis::{
    convergence_testbed, run_tv_experiment, temporal_convergence, MemberSource, TvVariant,
};
use perk::multirate::{integrate, snapshots_to_csv, IntegrateConfig, LinearRhs, Problem, RhsCounters};
use perk::spectra::{
    arnoldi_estimate, dense_spectrum, finite_difference_jacobian, hull_shifts, ArnoldiConfig,
    HullShifts, Spectrum, DEFAULT_DENSE_CAP, DEFAULT_TARGET_EIGENVALUES,
};
use perk::stabpoly::{optimize, StabilityPolynomial, DEFAULT_DT_TOL};
use perk::tableau::{build_family, verify_order, PerkFamily, StagePattern};
use perk::testbed::{
    assemble_upwind_advection, burgers_godunov_rhs, smooth_advection_ic, AmrThresholds,
    LinearOperator, Mesh1D, MeshState,
};
use perk::{PerkError, Result};

#[derive(Parser)]
#[command(name = "perk", version, about = "Paired explicit Runge-Kutta toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed given in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Parallelism cap. Computations currently run on one thread.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the spectrum of a testbed semidiscretization.
    Spectrum(Common),
    /// Optimize stability polynomials for a spectrum.
    Optimize(Common),
    /// Build a P-ERK family from stability polynomials.
    Tableau(Common),
    /// Integrate a testbed problem with a family.
    Run(Common),
    /// Total-variation tables.
    Tables(Common),
    /// Temporal convergence study.
    Convergence(Common),
    /// Cost report from recorded counters.
    Report(Common),
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(common: &Common) -> Result<(T, Option<String>)> {
    match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            Ok((serde_json::from_str(&text)?, Some(text)))
        }
        None => Ok((T::default(), None)),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Output {
    dir: PathBuf,
    command: &'static str,
    seed: u64,
    inputs: BTreeMap<String, String>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    inputs_sha256: &'a BTreeMap<String, String>,
    outputs: &'a [String],
}

impl Output {
    fn new(common: &Common, command: &'static str, seed: u64, config_text: Option<&str>) -> Result<Self> {
        fs::create_dir_all(&common.out)?;
        let mut inputs = BTreeMap::new();
        if let (Some(path), Some(text)) = (&common.config, config_text) {
            inputs.insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        }
        Ok(Self {
            dir: common.out.clone(),
            command,
            seed,
            inputs,
            files: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            inputs_sha256: &self.inputs,
            outputs: &self.files,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn default_speed() -> f64 {
    1.0
}

fn default_length() -> f64 {
    2.0
}

#[derive(Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum SpectrumMethod {
    #[default]
    Dense,
    Arnoldi,
}

#[derive(Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum ProblemKind {
    #[default]
    Advection,
    Burgers,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectrumConfig {
    #[serde(default)]
    problem: ProblemKind,
    cells: usize,
    #[serde(default = "default_speed")]
    speed: f64,
    #[serde(default = "default_length")]
    domain_length: f64,
    #[serde(default)]
    method: SpectrumMethod,
    dense_cap: Option<usize>,
    /// CSV of shifts (`re,im,delta`) for Arnoldi.
    shifts_file: Option<PathBuf>,
    /// Dense spectrum at this resolution supplies the shifts, scaled by `cells / reduced_cells`.
    reduced_cells: Option<usize>,
    /// Multiplies the final spectrum.
    scale: Option<f64>,
    target_eigenvalues: Option<usize>,
    tol: Option<f64>,
    #[serde(default)]
    seed: u64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Advection,
            cells: 64,
            speed: 1.0,
            domain_length: 2.0,
            method: SpectrumMethod::Dense,
            dense_cap: None,
            shifts_file: None,
            reduced_cells: None,
            scale: None,
            target_eigenvalues: None,
            tol: None,
            seed: 0,
        }
    }
}

fn testbed_operator(problem: ProblemKind, cells: usize, length: f64, speed: f64) -> Result<LinearOperator> {
    let mesh = Mesh1D::uniform(-0.5 * length, length, cells)?;
    match problem {
        ProblemKind::Advection => assemble_upwind_advection(&mesh, speed),
        ProblemKind::Burgers => {
            let u = smooth_advection_ic(&mesh);
            finite_difference_jacobian(|v| burgers_godunov_rhs(&mesh, v), &u, None)
        }
    }
}

fn cmd_spectrum(common: &Common) -> Result<()> {
    let (cfg, text): (SpectrumConfig, _) = read_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mut out = Output::new(common, "spectrum", seed, text.as_deref())?;
    let op = testbed_operator(cfg.problem, cfg.cells, cfg.domain_length, cfg.speed)?;
    let cap = cfg.dense_cap.unwrap_or(DEFAULT_DENSE_CAP);
    let mut spectrum = match cfg.method {
        SpectrumMethod::Dense => {
            if cfg.cells > cap {
                return Err(PerkError::InvalidInput(format!(
                    "{} cells exceed the dense cap {cap}; use \"method\": \"arnoldi\" with \"shifts_file\" or \"reduced_cells\"",
                    cfg.cells
                )));
            }
            let s = dense_spectrum(&op, cap)?;
            out.write("shifts.csv", &hull_shifts(&s)?.to_csv())?;
            s
        }
        SpectrumMethod::Arnoldi => {
            let shifts = match (&cfg.shifts_file, cfg.reduced_cells) {
                (Some(path), _) => HullShifts::from_csv(&out.input(path)?)?,
                (None, Some(reduced)) => {
                    let small = testbed_operator(cfg.problem, reduced, cfg.domain_length, cfg.speed)?;
                    hull_shifts(&dense_spectrum(&small, cap)?)?.scaled(cfg.cells as f64 / reduced as f64)?
                }
                (None, None) => {
                    return Err(PerkError::InvalidInput(
                        "Arnoldi needs \"shifts_file\" or \"reduced_cells\" to place its shifts".into(),
                    ))
                }
            };
            out.write("shifts.csv", &shifts.to_csv())?;
            let arnoldi = ArnoldiConfig::for_target(
                cfg.target_eigenvalues.unwrap_or(DEFAULT_TARGET_EIGENVALUES).min(cfg.cells),
                shifts.shifts.len(),
                cfg.tol.unwrap_or(1e-10),
                seed,
            );
            let s = arnoldi_estimate(&op, &shifts, &arnoldi)?;
            if !s.all_converged {
                eprintln!("warning: some Ritz pairs did not reach the residual tolerance");
            }
            s
        }
    };
    if let Some(factor) = cfg.scale {
        spectrum = perk::spectra::scale_spectrum(&spectrum, factor)?;
    }
    out.write("spectrum.csv", &spectrum.to_csv())?;
    out.finish()
}

#[derive(Deserialize, Clone, Copy)]
struct CircleConfig {
    center: f64,
    radius: f64,
    points: usize,
}

impl Default for CircleConfig {
    fn default() -> Self {
        Self {
            center: -1.0,
            radius: 1.0,
            points: 256,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeConfig {
    spectrum_file: Option<PathBuf>,
    /// Used when no spectrum file is given.
    #[serde(default = "default_circle")]
    circle: Option<CircleConfig>,
    p: usize,
    degrees: Vec<usize>,
    dt_tol: Option<f64>,
    #[serde(default)]
    seed: u64,
}

fn default_circle() -> Option<CircleConfig> {
    Some(CircleConfig::default())
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            spectrum_file: None,
            circle: Some(CircleConfig::default()),
            p: 2,
            degrees: vec![8],
            dt_tol: None,
            seed: 0,
        }
    }
}

fn load_spectrum(out: &mut Output, file: &Option<PathBuf>, circle: Option<CircleConfig>) -> Result<Spectrum> {
    match (file, circle) {
        (Some(path), _) => {
            let text = out.input(path)?;
            Spectrum::from_csv(&text, path.display().to_string())
        }
        (None, Some(c)) => Ok(Spectrum::circle(c.center, c.radius, c.points)),
        (None, None) => Err(PerkError::InvalidInput(
            "give \"spectrum_file\" or \"circle\"".into(),
        )),
    }
}

fn cmd_optimize(common: &Common) -> Result<()> {
    let (cfg, text): (OptimizeConfig, _) = read_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mut out = Output::new(common, "optimize", seed, text.as_deref())?;
    let spectrum = load_spectrum(&mut out, &cfg.spectrum_file, cfg.circle)?;
    for &e in &cfg.degrees {
        let poly = optimize(&spectrum, cfg.p, e, cfg.dt_tol.unwrap_or(DEFAULT_DT_TOL))?;
        out.write(&format!("poly_p{}_E{e}.json", cfg.p), &(poly.to_json()? + "\n"))?;
    }
    out.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberEntry {
    polynomial: PathBuf,
    stages: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableauConfig {
    p: usize,
    stages: usize,
    #[serde(default = "default_pattern")]
    pattern: StagePattern,
    /// Polynomial files; each may override the stage count, which must agree.
    #[serde(default)]
    members: Vec<MemberEntry>,
    /// Alternatively optimize on a circle for these degrees.
    #[serde(default)]
    degrees: Vec<usize>,
    circle: Option<CircleConfig>,
    dt_tol: Option<f64>,
    #[serde(default)]
    seed: u64,
}

fn default_pattern() -> StagePattern {
    StagePattern::Standard
}

impl Default for TableauConfig {
    fn default() -> Self {
        Self {
            p: 2,
            stages: 16,
            pattern: StagePattern::Standard,
            members: Vec::new(),
            degrees: vec![8, 16],
            circle: None,
            dt_tol: Some(1e-10),
            seed: 0,
        }
    }
}

fn cmd_tableau(common: &Common) -> Result<()> {
    let (cfg, text): (TableauConfig, _) = read_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mut out = Output::new(common, "tableau", seed, text.as_deref())?;
    let mut polys: Vec<StabilityPolynomial> = Vec::new();
    for m in &cfg.members {
        if let Some(s) = m.stages.filter(|&s| s != cfg.stages) {
            return Err(PerkError::InvalidInput(format!(
                "member {} requests {s} stages but the family has {}",
                m.polynomial.display(),
                cfg.stages
            )));
        }
        polys.push(StabilityPolynomial::from_json(&out.input(&m.polynomial)?)?);
    }
    if !cfg.degrees.is_empty() {
        let c = cfg.circle.unwrap_or_default();
        let circle = Spectrum::circle(c.center, c.radius, c.points);
        for &e in &cfg.degrees {
            polys.push(optimize(&circle, cfg.p, e, cfg.dt_tol.unwrap_or(1e-10))?);
        }
    }
    let family = build_family(&polys, cfg.p, cfg.stages, cfg.pattern, seed)?;
    let report = verify_order(&family);
    if !report.passes(1e-12, 1e-14) {
        return Err(PerkError::Construction(format!(
            "order residual {:e}, consistency residual {:e}",
            report.max_order_residual(),
            report.max_consistency_residual()
        )));
    }
    out.write("family.txt", &family.to_text())?;
    out.write("order_report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    out.finish()
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct AmrConfig {
    interval: usize,
    max_level: u32,
    refine: f64,
    coarsen: f64,
    /// Adaptation passes applied to the initial state.
    #[serde(default)]
    initial_passes: usize,
}

#[derive(Deserialize, Clone, Copy, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum InitialState {
    #[default]
    Smooth,
    Gaussian,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    family_file: PathBuf,
    #[serde(default)]
    problem: ProblemKind,
    #[serde(rename = "N0")]
    n0: usize,
    cfl: f64,
    t_final: f64,
    amr: Option<AmrConfig>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_speed")]
    speed: f64,
    #[serde(default)]
    initial: InitialState,
    snapshot_every: Option<usize>,
    #[serde(default = "default_true")]
    recompute_every_step: bool,
    /// Repeated RHS sweeps used to estimate the per-cell cost for the report.
    timing_sweeps: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family_file: PathBuf::from("family.txt"),
            problem: ProblemKind::Advection,
            n0: 64,
            cfl: 1.0,
            t_final: 1.0,
            amr: None,
            seed: 0,
            speed: 1.0,
            initial: InitialState::Smooth,
            snapshot_every: None,
            recompute_every_step: true,
            timing_sweeps: None,
        }
    }
}

fn initial_state(mesh: &Mesh1D, kind: InitialState) -> Vec<f64> {
    match kind {
        InitialState::Smooth => smooth_advection_ic(mesh),
        InitialState::Gaussian => mesh
            .centers()
            .iter()
            .map(|x| 1.0 + (-(x / 0.1).powi(2)).exp())
            .collect(),
    }
}

fn cmd_run(common: &Common) -> Result<()> {
    let (cfg, text): (RunConfig, _) = read_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mut out = Output::new(common, "run", seed, text.as_deref())?;
    let family = PerkFamily::from_text(&out.input(&cfg.family_file)?)?;
    let mut mesh = Mesh1D::uniform(-1.0, 2.0, cfg.n0)?;
    let mut u = initial_state(&mesh, cfg.initial);
    let thresholds = cfg.amr.map(|a| AmrThresholds {
        refine: a.refine,
        coarsen: a.coarsen,
        max_level: a.max_level,
    });
    if let (Some(a), Some(th)) = (cfg.amr, thresholds) {
        for _ in 0..a.initial_passes {
            let ind = perk::testbed::gradient_indicator(&u)?;
            let (m, _) = perk::testbed::refine_coarsen(&mesh, &u, &ind, th)?;
            mesh = m;
            u = initial_state(&mesh, cfg.initial);
        }
    }
    let problem = match cfg.problem {
        ProblemKind::Advection => Problem::Advection { speed: cfg.speed },
        ProblemKind::Burgers => Problem::Burgers,
    };
    let icfg = IntegrateConfig {
        t0: 0.0,
        tf: cfg.t_final,
        cfl: cfg.cfl,
        degree: 0,
        amr_interval: cfg.amr.map_or(usize::MAX, |a| a.interval.max(1)),
        amr: thresholds,
        recompute_every_step: cfg.recompute_every_step,
        snapshot_every: cfg.snapshot_every,
    };
    let start = std::time::Instant::now();
    let result = integrate(&family, problem, &mesh, &u, &icfg)?;
    let tau = start.elapsed().as_secs_f64();
    out.write("snapshots.csv", &snapshots_to_csv(&result.snapshots))?;
    out.write("counters.json", &(serde_json::to_string_pretty(&result.counters)? + "\n"))?;
    let state = MeshState::new(&result.mesh, &result.values)?;
    out.write("final_state.json", &(serde_json::to_string_pretty(&state)? + "\n"))?;
    let report = CostReport::build(&result.counters, &family, None, None)?;
    out.write("cost_report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    if let Some(sweeps) = cfg.timing_sweeps {
        let per_cell = match problem {
            Problem::Advection { speed } => {
                let op = assemble_upwind_advection(&result.mesh, speed)?;
                time_rhs_per_cell(&LinearRhs { op: &op }, &result.values, sweeps)?
            }
            Problem::Burgers => time_rhs_per_cell(
                &perk::multirate::BurgersRhs { mesh: &result.mesh },
                &result.values,
                sweeps,
            )?,
        };
        let timed = CostReport::build(&result.counters, &family, None, Some((tau, per_cell)))?;
        // wallclock values are not reproducible, so they stay out of the primary outputs
        eprintln!("timing: {}", serde_json::to_string(&timed)?);
    }
    out.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TablesConfig {
    #[serde(default = "all_variants")]
    variants: Vec<TvVariant>,
    #[serde(default)]
    seed: u64,
}

fn all_variants() -> Vec<TvVariant> {
    TvVariant::ALL.to_vec()
}

impl Default for TablesConfig {
    fn default() -> Self {
        Self {
            variants: all_variants(),
            seed: 0,
        }
    }
}

fn cmd_tables(common: &Common) -> Result<()> {
    let (cfg, text): (TablesConfig, _) = read_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mut out = Output::new(common, "tables", seed, text.as_deref())?;
    let mut source = MemberSource::new();
    for v in cfg.variants {
        let table = run_tv_experiment(v, &mut source)?;
        out.write(&format!("tv_{}.csv", v.name()), &table.to_csv())?;
        out.write(&format!("tv_{}_full.csv", v.name()), &table.to_csv_full())?;
    }
    out.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvergenceConfig {
    orders: Vec<usize>,
    steps: Vec<usize>,
    t_final: f64,
    #[serde(default)]
    seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            orders: vec![2, 3],
            steps: vec![20, 40, 80, 160],
            t_final: 0.5,
            seed: 0,
        }
    }
}

fn cmd_convergence(common: &Common) -> Result<()> {
    let (cfg, text): (ConvergenceConfig, _) = read_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mut out = Output::new(common, "convergence", seed, text.as_deref())?;
    let (mesh, u0) = convergence_testbed()?;
    let mut studies = BTreeMap::new();
    for &p in &cfg.orders {
        let family = perk::analysis::convergence_family(p, seed)?;
        studies.insert(format!("p{p}"), temporal_convergence(&family, &mesh, &u0, cfg.t_final, &cfg.steps)?);
    }
    out.write("convergence.json", &(serde_json::to_string_pretty(&studies)? + "\n"))?;
    out.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportConfig {
    counters_file: PathBuf,
    family_file: PathBuf,
    cfl_ratio: Option<f64>,
    tau: Option<f64>,
    tau_rhs_per_cell: Option<f64>,
    #[serde(default)]
    seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            counters_file: PathBuf::from("counters.json"),
            family_file: PathBuf::from("family.txt"),
            cfl_ratio: None,
            tau: None,
            tau_rhs_per_cell: None,
            seed: 0,
        }
    }
}

fn cmd_report(common: &Common) -> Result<()> {
    let (cfg, text): (ReportConfig, _) = read_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mut out = Output::new(common, "report", seed, text.as_deref())?;
    let counters: RhsCounters = serde_json::from_str(&out.input(&cfg.counters_file)?)?;
    let family = PerkFamily::from_text(&out.input(&cfg.family_file)?)?;
    let timing = match (cfg.tau, cfg.tau_rhs_per_cell) {
        (Some(t), Some(c)) => Some((t, c)),
        (None, None) => None,
        _ => {
            return Err(PerkError::InvalidInput(
                "\"tau\" and \"tau_rhs_per_cell\" must be given together".into(),
            ))
        }
    };
    let report = CostReport::build(&counters, &family, cfg.cfl_ratio, timing)?;
    out.write("cost_report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    out.finish()
}

fn exit_code(err: &PerkError) -> u8 {
    match err {
        PerkError::Abort(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Spectrum(c) => cmd_spectrum(c),
        Command::Optimize(c) => cmd_optimize(c),
        Command::Tableau(c) => cmd_tableau(c),
        Command::Run(c) => cmd_run(c),
        Command::Tables(c) => cmd_tables(c),
        Command::Convergence(c) => cmd_convergence(c),
        Command::Report(c) => cmd_report(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
