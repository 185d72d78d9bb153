//! Command-line front end.
//!
//! `tvipm run` builds a scenario from a config file and flags (flags win),
//! integrates it and writes a plot-ready table or report. `tvipm schema`
//! prints the column reference. Failures end with a one-line JSON record on
//! stderr and exit code 2 (bad configuration), 3 (solver failure) or 4 (I/O).

pub mod config;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::SymmetricEigen;
use serde::Serialize;
use thiserror::Error;

use crate::barrier::BarrierSchedules;
use crate::dynamics::GainSettings;
use crate::error::Error;
use crate::integrator::{integrate, schedules_with_auto_slack, InitialState, IntegratorConfig, Mode};
use crate::oracle::{tracking_error, OracleConfig};
use crate::problem::{FnField, LinearConstraint, LinearEquality, Matrix, TimePartials, TimeVaryingProblem, Vector};
use crate::scenarios::l1ls::{build_l1ls, run_ipm_comparison, IpmConfig, IpmMethod, L1lsParams, RNG_NAME};
use crate::scenarios::robot::{robot_simulate, RobotConfig, Workspace, STATIC_STARTS};
use crate::scenarios::tvqp::TvqpScenario;

pub use config::{Format, RunConfig, Scenario};
pub use output::{read_table, write_table, write_trajectory, Table, SCHEMA};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Solver(Error::InvalidInput(_)) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(e) => e.kind(),
            CliError::Io(_) => "io",
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Solver(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "tvipm", version, about = "Prediction-correction interior-point dynamics")]
pub struct Cli {
    /// Print the output column reference and exit.
    #[arg(long)]
    pub schema: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its trajectory or report.
    Run(Box<RunArgs>),
    /// Print the output column reference.
    Schema,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Flat key = value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// tvqp | l1ls | robot | custom
    #[arg(long)]
    pub scenario: Option<String>,
    /// tvqp: paper; l1ls: desk | paper; robot: static (= paper) | moving
    #[arg(long)]
    pub preset: Option<String>,
    /// Dynamics mode, or compare | snipm | anipm for l1ls.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "gamma-c")]
    pub gamma_c: Option<f64>,
    #[arg(long = "gamma-s")]
    pub gamma_s: Option<f64>,
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    /// Comma-separated initial point.
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv | json | both
    #[arg(long)]
    pub format: Option<String>,
}

impl RunArgs {
    /// Config file entries overridden by the flags that were given.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        let num = |v: Option<f64>| v.map(|x| format!("{x:e}"));
        let flags = [
            ("scenario", self.scenario.clone()),
            ("preset", self.preset.clone()),
            ("mode", self.mode.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
            ("tau", num(self.tau)),
            ("alpha", num(self.alpha)),
            ("gamma_c", num(self.gamma_c)),
            ("gamma_s", num(self.gamma_s)),
            ("c0", num(self.c0)),
            ("s0", num(self.s0)),
            ("t_end", num(self.t_end)),
            ("start", self.start.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("format", self.format.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    let result = match (&cli.command, cli.schema) {
        (Some(Command::Schema), _) | (None, true) => stdout
            .write_all(SCHEMA.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
        (Some(Command::Run(args)), false) => args.resolve().and_then(|cfg| run(&cfg, stdout)),
        (Some(Command::Run(_)), true) => Err(CliError::Config("--schema takes no subcommand".into())),
        (None, false) => Err(CliError::Config("missing subcommand; try `tvipm run --help`".into())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.record());
            e.exit_code()
        }
    }
}

/// Output of one run before it is written.
enum Artifact {
    Table(Table),
    Report { json: String, table: Table },
}

/// Runs a resolved configuration and writes the artifact to `cfg.out`, or to
/// `stdout` when no path is set.
pub fn run(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    if cfg.out.is_none() && cfg.format == Format::Both {
        return Err(CliError::Config("format 'both' needs --out".into()));
    }
    let artifact = match cfg.scenario {
        Scenario::Tvqp => Artifact::Table(run_tvqp(cfg)?),
        Scenario::Custom => Artifact::Table(run_custom(cfg)?),
        Scenario::Robot => Artifact::Table(run_robot(cfg)?),
        Scenario::L1ls => run_l1ls(cfg)?,
    };
    match (&cfg.out, artifact) {
        (Some(out), Artifact::Table(t)) => write_table(&t, cfg.format, out).map(|_| ()),
        (Some(out), Artifact::Report { json, table }) => {
            for (path, f) in output::output_paths(out, cfg.format) {
                let text = match f {
                    Format::Json => json.clone(),
                    _ => table.to_csv()?,
                };
                std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
        (None, artifact) => {
            let text = match (artifact, cfg.format) {
                (Artifact::Table(t), Format::Json) => t.to_json()?,
                (Artifact::Table(t), _) => t.to_csv()?,
                (Artifact::Report { json, .. }, Format::Json) => json,
                (Artifact::Report { table, .. }, _) => table.to_csv()?,
            };
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn require_preset(cfg: &RunConfig, allowed: &[&str], default: &'static str) -> Result<String, CliError> {
    let preset = cfg.preset.clone().unwrap_or_else(|| default.to_string());
    if allowed.contains(&preset.as_str()) {
        Ok(preset)
    } else {
        Err(CliError::Config(format!(
            "unknown preset '{preset}' for this scenario (expected one of {allowed:?})"
        )))
    }
}

fn parse_mode(cfg: &RunConfig, default: Mode) -> Result<Mode, CliError> {
    match &cfg.mode {
        Some(m) => m.parse().map_err(|_| CliError::Config(format!("unknown mode '{m}'"))),
        None => Ok(default),
    }
}

fn start_vector(cfg: &RunConfig, dim: usize, default: Vector) -> Result<Vector, CliError> {
    match &cfg.start {
        Some(v) if v.len() == dim => Ok(Vector::from_column_slice(v)),
        Some(v) => Err(CliError::Config(format!(
            "start has {} entries, expected {dim}",
            v.len()
        ))),
        None => Ok(default),
    }
}

/// Integrates a problem and appends the oracle tracking error per sample.
fn integrate_with_tracking(
    problem: &TimeVaryingProblem,
    mode: Mode,
    gains: GainSettings,
    schedules: Option<BarrierSchedules>,
    icfg: IntegratorConfig,
    init: &InitialState,
) -> Result<Table, CliError> {
    let traj = integrate(problem, mode, gains, schedules, icfg, init).map_err(|a| CliError::Solver(a.error))?;
    let track: Vec<f64> = tracking_error(&traj, problem, 1, &OracleConfig::default())?
        .iter()
        .map(|p| p.error.unwrap_or(f64::NAN))
        .collect();
    output::trajectory_table(&traj, problem, Some(&track))
}

fn run_tvqp(cfg: &RunConfig) -> Result<Table, CliError> {
    require_preset(cfg, &["paper"], "paper")?;
    let sc = TvqpScenario::paper();
    let mode = parse_mode(cfg, Mode::Barrier)?;
    let gains = GainSettings::with_alpha(cfg.alpha.unwrap_or(sc.alpha));
    let schedules = BarrierSchedules::new(
        cfg.c0.unwrap_or(sc.c0),
        cfg.gamma_c.unwrap_or(sc.gamma_c),
        cfg.s0.unwrap_or(sc.s0),
        cfg.gamma_s.unwrap_or(sc.gamma_s),
    )?;
    let icfg = IntegratorConfig::new(cfg.tau.unwrap_or(sc.tau), cfg.t_end.unwrap_or(sc.t_end));
    let x0 = start_vector(cfg, 2, sc.x0.clone())?;
    integrate_with_tracking(&sc.problem, mode, gains, Some(schedules), icfg, &InitialState::new(x0))
}

/// Builds the custom quadratic program described by the config.
pub fn build_custom(cfg: &RunConfig) -> Result<TimeVaryingProblem, CliError> {
    let spec = &cfg.custom;
    let n = (spec.h.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != spec.h.len() {
        return Err(CliError::Config(format!(
            "h has {} entries, not a square matrix",
            spec.h.len()
        )));
    }
    let h = Matrix::from_row_slice(n, n, &spec.h);
    if (&h - h.transpose()).amax() > 1e-12 * (1.0 + h.amax()) {
        return Err(CliError::Config("h must be symmetric".into()));
    }
    let m = SymmetricEigen::new(h.clone()).eigenvalues.min();
    if !(m > 0.0) {
        return Err(CliError::Config(format!(
            "h must be positive definite (smallest eigenvalue {m:e})"
        )));
    }
    let vec_or_zero = |v: &Option<Vec<f64>>, name: &str| -> Result<Vector, CliError> {
        match v {
            Some(v) if v.len() == n => Ok(Vector::from_column_slice(v)),
            Some(v) => Err(CliError::Config(format!(
                "{name} has {} entries, expected {n}",
                v.len()
            ))),
            None => Ok(Vector::zeros(n)),
        }
    };
    let q = vec_or_zero(&spec.q, "q")?;
    let q_rate = vec_or_zero(&spec.q_rate, "q_rate")?;
    let (hv, hg, hh) = (h.clone(), h.clone(), h);
    let (qv, qg) = (q.clone(), q);
    let (rv, rg, rp) = (q_rate.clone(), q_rate.clone(), q_rate);
    let objective = FnField::new(
        move |x: &Vector, t: f64| 0.5 * x.dot(&(&hv * x)) + (&qv + &rv * t).dot(x),
        move |x: &Vector, t: f64| &hg * x + &qg + &rg * t,
    )
    .with_hessian(move |_, _| hh.clone())
    .with_time_partials(move |x: &Vector, _t: f64| TimePartials {
        value: rp.dot(x),
        grad: rp.clone(),
    });
    let mut problem = TimeVaryingProblem::new(n, objective, m)?;
    for (i, row) in spec.ineqs.iter().enumerate() {
        if row.a.len() != n {
            return Err(CliError::Config(format!(
                "ineq {} has {} coefficients, expected {n}",
                i + 1,
                row.a.len()
            )));
        }
        problem = problem.with_inequality(
            LinearConstraint::new(Vector::from_column_slice(&row.a), row.b).with_offset_rate(row.b_rate),
        );
    }
    if !spec.eqs.is_empty() {
        let rows = spec.eqs.len();
        let mut a = Matrix::zeros(rows, n);
        for (i, row) in spec.eqs.iter().enumerate() {
            if row.a.len() != n {
                return Err(CliError::Config(format!(
                    "eq {} has {} coefficients, expected {n}",
                    i + 1,
                    row.a.len()
                )));
            }
            a.row_mut(i).copy_from_slice(&row.a);
        }
        let b = Vector::from_iterator(rows, spec.eqs.iter().map(|r| r.b));
        let b_rate = Vector::from_iterator(rows, spec.eqs.iter().map(|r| r.b_rate));
        problem = problem.with_equality(LinearEquality::new(a, b).with_rhs_rate(b_rate))?;
    }
    Ok(problem)
}

fn run_custom(cfg: &RunConfig) -> Result<Table, CliError> {
    let problem = build_custom(cfg)?;
    let n = problem.dim();
    let default_mode = match (problem.num_inequalities() > 0, problem.num_equalities() > 0) {
        (false, false) => Mode::Unconstrained,
        (false, true) => Mode::Equality,
        (true, false) => Mode::Barrier,
        (true, true) => Mode::Combined,
    };
    let mode = parse_mode(cfg, default_mode)?;
    let default_x0 = match &cfg.custom.x0 {
        Some(v) if v.len() == n => Vector::from_column_slice(v),
        Some(v) => return Err(CliError::Config(format!("x0 has {} entries, expected {n}", v.len()))),
        None => Vector::zeros(n),
    };
    let x0 = start_vector(cfg, n, default_x0)?;
    let gains = GainSettings::with_alpha(cfg.alpha.unwrap_or(GainSettings::default().alpha));
    let schedules = if mode.uses_barrier() {
        let c0 = cfg.c0.unwrap_or(10.0);
        let gamma_c = cfg.gamma_c.unwrap_or(1.0);
        let gamma_s = cfg.gamma_s.unwrap_or(5.0);
        Some(match cfg.s0 {
            Some(s0) => BarrierSchedules::new(c0, gamma_c, s0, gamma_s)?,
            None => schedules_with_auto_slack(&problem, &x0, c0, gamma_c, gamma_s)?,
        })
    } else {
        None
    };
    let icfg = IntegratorConfig::new(cfg.tau.unwrap_or(0.01), cfg.t_end.unwrap_or(10.0));
    integrate_with_tracking(&problem, mode, gains, schedules, icfg, &InitialState::new(x0))
}

fn run_robot(cfg: &RunConfig) -> Result<Table, CliError> {
    let preset = require_preset(cfg, &["static", "paper", "moving"], "static")?;
    let (ws, mut rc) = if preset == "moving" {
        (Workspace::paper_moving(), RobotConfig::paper_moving())
    } else {
        (Workspace::paper_static(), RobotConfig::paper_static(STATIC_STARTS[0]))
    };
    if let Some(s) = &cfg.start {
        if s.len() != 2 {
            return Err(CliError::Config(format!("start has {} entries, expected 2", s.len())));
        }
        rc.start = [s[0], s[1]];
    }
    if let Some(a) = cfg.alpha {
        rc.alpha = a;
    }
    if let Some(t) = cfg.tau {
        rc.tau = t;
    }
    if let Some(t) = cfg.t_end {
        rc.t_end = t;
    }
    rc.schedules = BarrierSchedules::new(
        cfg.c0.unwrap_or(rc.schedules.c0),
        cfg.gamma_c.unwrap_or(rc.schedules.gamma_c),
        0.0,
        0.0,
    )?;
    let traj = robot_simulate(&ws, &rc)?;
    let columns = [
        "t",
        "xc1",
        "xc2",
        "xhat1",
        "xhat2",
        "xd1",
        "xd2",
        "margin",
        "violation",
        "grad_norm",
        "c",
    ];
    let mut table = Table::new(columns.iter().map(|c| c.to_string()).collect());
    for s in &traj.samples {
        table.push(vec![
            s.t,
            s.x_c[0],
            s.x_c[1],
            s.x_hat[0],
            s.x_hat[1],
            s.x_d[0],
            s.x_d[1],
            s.margin,
            s.violation,
            s.grad_norm,
            s.c,
        ]);
    }
    Ok(table)
}

#[derive(Serialize)]
struct L1lsReport {
    scenario: &'static str,
    preset: String,
    seed: u64,
    rng: &'static str,
    params: L1lsParams,
    config: IpmConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    snipm_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    anipm_iters: Option<usize>,
    converged: std::collections::BTreeMap<&'static str, bool>,
    gap_trace: std::collections::BTreeMap<&'static str, Vec<Option<f64>>>,
}

fn run_l1ls(cfg: &RunConfig) -> Result<Artifact, CliError> {
    let preset = require_preset(cfg, &["desk", "paper"], "desk")?;
    let params = if preset == "paper" {
        L1lsParams::paper()
    } else {
        L1lsParams::desk()
    };
    let methods: Vec<IpmMethod> = match cfg.mode.as_deref().unwrap_or("compare") {
        "compare" => vec![IpmMethod::Snipm, IpmMethod::Anipm],
        "snipm" => vec![IpmMethod::Snipm],
        "anipm" => vec![IpmMethod::Anipm],
        other => return Err(CliError::Config(format!("unknown l1ls mode '{other}'"))),
    };
    let mut ipm = IpmConfig::default();
    if let Some(t) = cfg.tau {
        ipm.tau = t;
    }
    if let Some(a) = cfg.alpha {
        ipm.alpha = a;
    }
    if let Some(g) = cfg.gamma_c {
        ipm.gamma_c = g;
    }
    if let Some(c) = cfg.c0 {
        ipm.c0 = c;
    }
    let (instance, _) = build_l1ls(
        cfg.seed,
        params.m,
        params.n,
        params.k,
        params.noise_sigma,
        params.lambda,
    )?;
    let mut report = L1lsReport {
        scenario: "l1ls",
        preset,
        seed: cfg.seed,
        rng: RNG_NAME,
        params,
        config: ipm,
        snipm_iters: None,
        anipm_iters: None,
        converged: Default::default(),
        gap_trace: Default::default(),
    };
    let mut traces = Vec::new();
    for method in methods {
        let r = run_ipm_comparison(&instance, method, &ipm)?;
        match method {
            IpmMethod::Snipm => report.snipm_iters = Some(r.iterations),
            IpmMethod::Anipm => report.anipm_iters = Some(r.iterations),
        }
        report.converged.insert(method.as_str(), r.converged);
        report.gap_trace.insert(
            method.as_str(),
            r.gap_trace.iter().map(|g| g.is_finite().then_some(*g)).collect(),
        );
        traces.push((method, r.gap_trace));
    }
    let rows = traces.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
    let mut columns = vec!["iter".to_string()];
    columns.extend(traces.iter().map(|(m, _)| format!("{}_gap", m.as_str())));
    let mut table = Table::new(columns);
    for k in 0..rows {
        let mut row = vec![k as f64];
        row.extend(traces.iter().map(|(_, t)| t.get(k).copied().unwrap_or(f64::NAN)));
        table.push(row);
    }
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    json.push('\n');
    Ok(Artifact::Report { json, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_cli(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn tvqp_paper_columns() {
        let (code, out, err) = call(&["tvipm", "run", "--scenario", "tvqp", "--preset", "paper"]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.lines().next().unwrap(), "t,x1,x2,f1,s,c,grad_norm,track_err");
        assert_eq!(out.lines().count(), 64 + 1);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "scenario = tvqp\ntau = 0.5\nt_end = 1\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            tau: Some(0.25),
            ..RunArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.tau, cfg.t_end), (Some(0.25), Some(1.0)));
    }

    #[test]
    fn exit_codes() {
        let (code, _, err) = call(&["tvipm", "run", "--scenario", "maze"]);
        assert_eq!(code, 2);
        let rec: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(rec["exit_code"], 2);
        assert_eq!(call(&["tvipm", "run", "--tau", "-1"]).0, 2);
        assert_eq!(call(&["tvipm", "run", "--bogus"]).0, 2);
        // a start inside an obstacle is a geometry failure of the solver
        let (code, _, err) = call(&["tvipm", "run", "--scenario", "robot", "--start=-7,-6.5", "--t-end", "1"]);
        assert_eq!(code, 3, "{err}");
        assert!(err.contains("\"geometry\""));
        let (code, _, _) = call(&["tvipm", "run", "--t-end", "1", "--out", "/nonexistent-dir/x.csv"]);
        assert_eq!(code, 4);
    }

    #[test]
    fn schema_lists_columns() {
        let (code, out, _) = call(&["tvipm", "schema"]);
        assert_eq!(code, 0);
        assert_eq!(out, SCHEMA);
        assert_eq!(call(&["tvipm", "--schema"]).1, SCHEMA);
    }

    #[test]
    fn custom_problem_from_config() {
        let cfg = RunConfig::parse(
            "scenario = custom\nh = 2,0,0,2\nq_rate = -1,0\nineq = 1,1 | 1\nx0 = 0,0\nt_end = 2\ntau = 0.01\n",
        )
        .unwrap();
        let mut out = Vec::new();
        run(&cfg, &mut out).unwrap();
        let table = Table::from_csv(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(
            table.columns,
            ["t", "x1", "x2", "f1", "s", "c", "grad_norm", "track_err"]
        );
        let f1 = table.column("f1").unwrap();
        assert!(f1.iter().all(|v| *v < 1.0));
    }

    #[test]
    fn custom_rejects_indefinite_hessian() {
        let cfg = RunConfig::parse("scenario = custom\nh = 1,0,0,-1\n").unwrap();
        assert_eq!(run(&cfg, &mut Vec::new()).unwrap_err().exit_code(), 2);
    }
}
