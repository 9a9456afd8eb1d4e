//! Command-line front end: problem registry, solver dispatch, CSV/JSON
//! emission, and the bundled invariant check suites.
//!
//! Exit codes: 0 on success, 1 on solver failure (artifacts are still
//! written), 2 on usage errors.

mod checks;
mod registry;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use ddeflow::history::{write_trajectory_csv, HistoryFunction, Trajectory};
use ddeflow::numerics::Tolerance;
use ddeflow::prelude::*;

type CliResult<T> = std::result::Result<T, UsageError>;
use ddeflow::process::{process_run, project_trajectory};
use ddeflow::semiflow::SemiflowRun;

/// A bad request: unknown problem, malformed spec, unreadable input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Parser)]
#[command(name = "ddeflow", version, about = "Delay differential equations with unbounded delay: certified Picard stepping, processes, and Volterra integro-differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an autonomous equation x'(t) = f(x_t)
    SolveDde(SolveDdeArgs),
    /// Solve a nonautonomous equation through the clock-augmented process
    SolveProcess(SolveProcessArgs),
    /// Solve a Volterra integro-differential equation
    SolveVide(SolveVideArgs),
    /// Solve the variational equation along a computed trajectory
    Variational(VariationalArgs),
    /// Run invariant check suites and print a pass/fail table
    Check(CheckArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Problem name, optionally parameterized: e.g. "linear_const_delay(-1,1)"
    #[arg(long)]
    problem: Option<String>,
    /// Grid step of the solver lattice
    #[arg(long)]
    grid_step: Option<f64>,
    /// Absolute Picard residual tolerance
    #[arg(long)]
    atol: Option<f64>,
    /// Relative Picard residual tolerance
    #[arg(long)]
    rtol: Option<f64>,
    /// Picard sweep limit per step
    #[arg(long)]
    max_iters: Option<usize>,
    /// Seed for randomized probing and property checks
    #[arg(long)]
    seed: Option<u64>,
    /// Initial history: "const:c[,c2,..]", "linear:a,b", or "samples:path.csv"
    #[arg(long)]
    history: Option<String>,
    /// Trajectory CSV output path
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Run-summary JSON output path
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Plain-text key=value config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SolveDdeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Solve horizon (defaults to the problem's shipped horizon)
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct SolveProcessArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Initial time of the process
    #[arg(long)]
    t0: Option<f64>,
    /// Final time of the process
    #[arg(long)]
    t: Option<f64>,
}

#[derive(Args)]
struct SolveVideArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    horizon: Option<f64>,
    /// Also run the direct product-trapezoid marcher and report the
    /// distance between the two routes
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct VariationalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    horizon: Option<f64>,
    /// Direction history spec (same forms as --history)
    #[arg(long)]
    direction: Option<String>,
    /// Central-difference step of the comparison oracle
    #[arg(long)]
    fd_step: Option<f64>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Suite: semigroup, cocycle, clock, uniqueness, contraction,
    /// vide-routes, variational, or all
    #[arg(long, default_value = "all")]
    suite: String,
}

/// key=value lines; '#' starts a comment.
fn load_config_file(path: &Path) -> CliResult<HashMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config '{}': {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            UsageError(format!("config line {} is not key=value: '{line}'", lineno + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Resolution order: command-line flag, then config file, then default.
struct Resolver {
    file: HashMap<String, String>,
}

impl Resolver {
    fn new(config: Option<&PathBuf>) -> CliResult<Self> {
        let file = match config {
            Some(p) => load_config_file(p)?,
            None => HashMap::new(),
        };
        Ok(Self { file })
    }

    fn get<T: FromStr + Clone>(&self, flag: &Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(Some(v.clone()));
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| UsageError(format!("config key '{key}': {e}"))),
            None => Ok(None),
        }
    }

    fn require<T: FromStr + Clone>(
        &self,
        flag: &Option<T>,
        key: &str,
        what: &str,
    ) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        self.get(flag, key)?
            .ok_or_else(|| UsageError(format!("{what} required (flag --{key} or config key {key})")))
    }
}

fn solver_config(common: &CommonArgs, r: &Resolver) -> CliResult<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(dt) = r.get(&common.grid_step, "grid_step")? {
        cfg.grid_step = dt;
    }
    let atol = r.get(&common.atol, "atol")?.unwrap_or(cfg.tol.atol);
    let rtol = r.get(&common.rtol, "rtol")?.unwrap_or(cfg.tol.rtol);
    let iters = r.get(&common.max_iters, "max_iters")?.unwrap_or(cfg.tol.max_iters);
    cfg.tol = Tolerance::new(atol, rtol, iters)
        .map_err(|e| UsageError(format!("bad tolerances: {e}")))?;
    if let Some(seed) = r.get(&common.seed, "seed")? {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| UsageError(format!("bad configuration: {e}")))?;
    Ok(cfg)
}

fn write_outputs(
    common: &CommonArgs,
    r: &Resolver,
    trajectory: &Trajectory,
    summary: serde_json::Value,
) -> CliResult<()> {
    let csv_path = r
        .get(&common.out_csv, "out_csv")?
        .unwrap_or_else(|| PathBuf::from("run.csv"));
    let json_path = r
        .get(&common.out_json, "out_json")?
        .unwrap_or_else(|| PathBuf::from("run.json"));
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, trajectory)
        .map_err(|e| UsageError(format!("csv serialization: {e}")))?;
    fs::write(&csv_path, csv)
        .map_err(|e| UsageError(format!("cannot write '{}': {e}", csv_path.display())))?;
    let text = serde_json::to_string_pretty(&summary).expect("serializable summary");
    fs::write(&json_path, &text)
        .map_err(|e| UsageError(format!("cannot write '{}': {e}", json_path.display())))?;
    println!("{text}");
    Ok(())
}

fn run_exit(run: &SemiflowRun) -> ExitCode {
    if run.reached_horizon() {
        ExitCode::SUCCESS
    } else {
        if let Some(e) = &run.failure {
            eprintln!("solver stopped early: {e}");
        }
        ExitCode::from(1)
    }
}

fn summary_json(run: &SemiflowRun) -> serde_json::Value {
    serde_json::to_value(run.summary()).expect("serializable summary")
}

fn cmd_solve_dde(args: &SolveDdeArgs) -> CliResult<ExitCode> {
    let r = Resolver::new(args.common.config.as_ref())?;
    let cfg = solver_config(&args.common, &r)?;
    let problem = r.require(&args.common.problem, "problem", "problem name")?;
    let entry = registry::autonomous(&problem)?;
    let phi = match r.get::<String>(&args.common.history, "history")? {
        Some(spec) => registry::parse_history(&spec)?,
        None => entry.default_history,
    };
    let horizon = r.get(&args.horizon, "horizon")?.unwrap_or(entry.default_horizon);
    let run = semiflow(&entry.rhs, &phi, horizon, &cfg)
        .map_err(|e| UsageError(format!("invalid request: {e}")))?;
    write_outputs(&args.common, &r, &run.trajectory, summary_json(&run))?;
    Ok(run_exit(&run))
}

fn cmd_solve_process(args: &SolveProcessArgs) -> CliResult<ExitCode> {
    let r = Resolver::new(args.common.config.as_ref())?;
    let cfg = solver_config(&args.common, &r)?;
    let problem = r.require(&args.common.problem, "problem", "problem name")?;
    let entry = registry::nonautonomous(&problem)?;
    let phi = match r.get::<String>(&args.common.history, "history")? {
        Some(spec) => registry::parse_history(&spec)?,
        None => entry.default_history,
    };
    let t0 = r.get(&args.t0, "t0")?.unwrap_or(0.0);
    let t = r.get(&args.t, "t")?.unwrap_or(t0 + entry.default_horizon);
    if t < t0 {
        return Err(UsageError(format!("need t0 <= t, got t0 = {t0}, t = {t}")));
    }
    let pr = process_run(&entry.rhs, t, t0, &phi, &cfg)
        .map_err(|e| UsageError(format!("invalid request: {e}")))?;
    let solution = project_trajectory(&pr.run.trajectory);
    let mut summary = summary_json(&pr.run);
    summary["t0"] = serde_json::json!(t0);
    summary["clock_defect"] = serde_json::json!(pr.clock_defect());
    write_outputs(&args.common, &r, &solution, summary)?;
    Ok(run_exit(&pr.run))
}

fn cmd_solve_vide(args: &SolveVideArgs) -> CliResult<ExitCode> {
    let r = Resolver::new(args.common.config.as_ref())?;
    let cfg = solver_config(&args.common, &r)?;
    let problem = r.require(&args.common.problem, "problem", "problem name")?;
    let entry = registry::vide(&problem)?;
    let horizon = r.get(&args.horizon, "horizon")?.unwrap_or(entry.default_horizon);
    if horizon == 0.0 {
        // horizon-0 request: the trajectory is just the initial history
        let x = Trajectory::from_history(HistoryFunction::constant(entry.problem.initial()));
        let summary = serde_json::json!({
            "termination": "HorizonReached",
            "reached_time": 0.0,
            "steps": 0,
            "total_picard_iterations": 0,
        });
        write_outputs(&args.common, &r, &x, summary)?;
        return Ok(ExitCode::SUCCESS);
    }
    let pr = solve_vide(&entry.problem, horizon, &cfg)
        .map_err(|e| UsageError(format!("invalid request: {e}")))?;
    let solution = project_trajectory(&pr.run.trajectory);
    let mut summary = summary_json(&pr.run);
    summary["clock_defect"] = serde_json::json!(pr.clock_defect());
    if args.oracle {
        let direct = volterra_direct(&entry.problem, pr.run.reached_time.max(cfg.grid_step), cfg.grid_step)
            .map_err(|e| UsageError(format!("oracle failed: {e}")))?;
        let mut diff = 0.0_f64;
        for (i, &t) in direct.nodes().iter().enumerate() {
            if t > solution.horizon() {
                break;
            }
            let a = direct.value_at(i);
            let b = solution.eval(t);
            let d = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            diff = diff.max(d);
        }
        summary["oracle_distance"] = serde_json::json!(diff);
    }
    write_outputs(&args.common, &r, &solution, summary)?;
    Ok(run_exit(&pr.run))
}

fn cmd_variational(args: &VariationalArgs) -> CliResult<ExitCode> {
    let r = Resolver::new(args.common.config.as_ref())?;
    let cfg = solver_config(&args.common, &r)?;
    let problem = r.require(&args.common.problem, "problem", "problem name")?;
    let entry = registry::autonomous(&problem)?;
    let phi = match r.get::<String>(&args.common.history, "history")? {
        Some(spec) => registry::parse_history(&spec)?,
        None => entry.default_history,
    };
    let horizon = r.get(&args.horizon, "horizon")?.unwrap_or(entry.default_horizon / 2.0);
    let dir = match r.get::<String>(&args.direction, "direction")? {
        Some(spec) => registry::parse_history(&spec)?,
        None => HistoryFunction::constant(&vec![1.0; entry.rhs.dim()]),
    };
    let fd_step = r.get(&args.fd_step, "fd_step")?.unwrap_or(1e-4);

    let base = semiflow(&entry.rhs, &phi, horizon, &cfg)
        .map_err(|e| UsageError(format!("invalid request: {e}")))?;
    if !base.reached_horizon() {
        if let Some(e) = &base.failure {
            eprintln!("base solve stopped early: {e}");
        }
        return Ok(ExitCode::from(1));
    }
    let var = solve_variational(&entry.rhs, &base, &dir, horizon, &cfg)
        .map_err(|e| UsageError(format!("variational solve failed: {e}")))?;
    let fd = fd_solution_derivative(&entry.rhs, &phi, &dir, horizon, fd_step, &cfg)
        .map_err(|e| UsageError(format!("finite-difference oracle failed: {e}")))?;
    let distance = distance_to_path(&var, &fd);
    let summary = serde_json::json!({
        "reached_time": var.reached_time,
        "steps": var.steps.len(),
        "fd_step": fd_step,
        "fd_distance": distance,
    });
    write_outputs(&args.common, &r, &var.v, summary)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: &CheckArgs) -> CliResult<ExitCode> {
    let r = Resolver::new(args.common.config.as_ref())?;
    let cfg = solver_config(&args.common, &r)?;
    let problem = r.get(&args.common.problem, "problem")?;
    let suite = r.get(&Some(args.suite.clone()), "suite")?.unwrap();
    let rows = checks::run_suite(&suite, problem.as_deref(), &cfg)?;
    println!("{:<16} {:<28} {:>12} {:>10}   result", "suite", "problem", "defect", "bound");
    let mut all_pass = true;
    for row in &rows {
        all_pass &= row.pass;
        println!(
            "{:<16} {:<28} {:>12.3e} {:>10.1e}   {}",
            row.suite,
            row.problem,
            row.defect,
            row.bound,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SolveDde(args) => cmd_solve_dde(args),
        Command::SolveProcess(args) => cmd_solve_process(args),
        Command::SolveVide(args) => cmd_solve_vide(args),
        Command::Variational(args) => cmd_variational(args),
        Command::Check(args) => cmd_check(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
