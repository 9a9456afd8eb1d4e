//! The bundled invariant suites behind `ddeflow check`.

use std::sync::Arc;

use ddeflow::history::{HistoryFunction, SeminormIndex};
use ddeflow::prelude::*;
use ddeflow::process::{augment, combine_with_clock, process_run, project_trajectory};
use ddeflow::semiflow::contraction_certificate;
use ddeflow::vide::as_rhs;

use crate::registry;
use crate::UsageError;

type CheckResult<T> = std::result::Result<T, UsageError>;

/// One row of the check table.
pub struct CheckRow {
    pub suite: &'static str,
    pub problem: String,
    pub defect: f64,
    pub bound: f64,
    pub pass: bool,
}

fn row(suite: &'static str, problem: &str, defect: f64, bound: f64) -> CheckRow {
    CheckRow { suite, problem: problem.to_string(), defect, bound, pass: defect <= bound }
}

fn err_row(suite: &'static str, problem: &str) -> CheckRow {
    CheckRow { suite, problem: problem.to_string(), defect: f64::NAN, bound: 0.0, pass: false }
}

pub fn semigroup(problem: &str, cfg: &SolverConfig) -> CheckResult<Vec<CheckRow>> {
    let entry = registry::autonomous(problem)?;
    let j = SeminormIndex::new(2).unwrap();
    // split the default horizon in half for the composed run
    let t = entry.default_horizon / 2.0;
    let d = match check_semigroup(&entry.rhs, &entry.default_history, t, t, j, cfg) {
        Ok(d) => d,
        Err(_) => return Ok(vec![err_row("semigroup", problem)]),
    };
    Ok(vec![row("semigroup", problem, d, 1e-5)])
}

pub fn cocycle(problem: &str, cfg: &SolverConfig) -> CheckResult<Vec<CheckRow>> {
    let entry = registry::nonautonomous(problem)?;
    let j = SeminormIndex::new(2).unwrap();
    let s = entry.default_horizon / 2.0;
    let d = match check_cocycle(&entry.rhs, s, s / 2.0, 0.0, &entry.default_history, j, cfg) {
        Ok(d) => d,
        Err(_) => return Ok(vec![err_row("cocycle", problem)]),
    };
    Ok(vec![row("cocycle", problem, d, 1e-5)])
}

pub fn clock(problem: &str, cfg: &SolverConfig) -> CheckResult<Vec<CheckRow>> {
    let entry = registry::nonautonomous(problem)?;
    let pr = match process_run(&entry.rhs, entry.default_horizon, 0.0, &entry.default_history, cfg)
    {
        Ok(pr) if pr.run.reached_horizon() => pr,
        _ => return Ok(vec![err_row("clock", problem)]),
    };
    Ok(vec![row("clock", problem, pr.clock_defect(), 1e-12)])
}

pub fn uniqueness(problem: &str, cfg: &SolverConfig) -> CheckResult<Vec<CheckRow>> {
    let entry = registry::autonomous(problem)?;
    let t = entry.default_horizon;
    let d = match check_uniqueness(&entry.rhs, &entry.default_history, t, 0.5, 0.25, cfg) {
        Ok(d) => d,
        Err(_) => return Ok(vec![err_row("uniqueness", problem)]),
    };
    Ok(vec![row("uniqueness", problem, d, 1e-6)])
}

pub fn contraction(problem: &str, cfg: &SolverConfig) -> CheckResult<Vec<CheckRow>> {
    // accepts autonomous, nonautonomous, or VIDE names
    let (f, phi, horizon, label): (RhsAutonomous, HistoryFunction, f64, String) =
        if let Ok(entry) = registry::autonomous(problem) {
            (entry.rhs, entry.default_history, entry.default_horizon, problem.to_string())
        } else if let Ok(entry) = registry::nonautonomous(problem) {
            (
                augment(&entry.rhs).rhs().clone(),
                combine_with_clock(0.0, &entry.default_history),
                entry.default_horizon,
                format!("{problem} (augmented)"),
            )
        } else {
            let entry = registry::vide(problem)?;
            let g = Arc::new(as_rhs(&entry.problem, cfg.quadrature_rule()));
            (
                augment(&g).rhs().clone(),
                combine_with_clock(0.0, &HistoryFunction::constant(entry.problem.initial())),
                entry.default_horizon,
                format!("{problem} (augmented)"),
            )
        };
    let run = match semiflow(&f, &phi, horizon, cfg) {
        Ok(run) if run.reached_horizon() => run,
        _ => return Ok(vec![err_row("contraction", &label)]),
    };
    let worst = match contraction_certificate(&f, &run, cfg, 20) {
        Ok(w) => w,
        Err(_) => return Ok(vec![err_row("contraction", &label)]),
    };
    let mut decay = 0.0_f64;
    for step in &run.steps {
        for r in step.report.ratios.iter().skip(1) {
            decay = decay.max(*r);
        }
    }
    Ok(vec![
        row("contraction", &label, worst, 0.6),
        row("residual-decay", &label, decay, 0.6),
    ])
}

pub fn vide_routes(problem: &str, cfg: &SolverConfig) -> CheckResult<Vec<CheckRow>> {
    let entry = registry::vide(problem)?;
    let horizon = entry.default_horizon;
    let pr = match solve_vide(&entry.problem, horizon, cfg) {
        Ok(pr) if pr.run.reached_horizon() => pr,
        _ => return Ok(vec![err_row("vide-routes", problem)]),
    };
    let x = project_trajectory(&pr.run.trajectory);
    let direct = match volterra_direct(&entry.problem, horizon, cfg.grid_step) {
        Ok(d) => d,
        Err(_) => return Ok(vec![err_row("vide-routes", problem)]),
    };
    let mut diff = 0.0_f64;
    for (i, &t) in direct.nodes().iter().enumerate() {
        let a = direct.value_at(i);
        let b = x.eval(t);
        let d = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        diff = diff.max(d);
    }
    Ok(vec![row("vide-routes", problem, diff, 5e-6)])
}

pub fn variational_check(problem: &str, cfg: &SolverConfig) -> CheckResult<Vec<CheckRow>> {
    let entry = registry::autonomous(problem)?;
    let t = entry.default_horizon / 2.0;
    let dir = HistoryFunction::constant(&vec![1.0; entry.rhs.dim()]);
    let base = match semiflow(&entry.rhs, &entry.default_history, t, cfg) {
        Ok(run) if run.reached_horizon() => run,
        _ => return Ok(vec![err_row("variational", problem)]),
    };
    let var = match solve_variational(&entry.rhs, &base, &dir, t, cfg) {
        Ok(v) => v,
        Err(_) => return Ok(vec![err_row("variational", problem)]),
    };
    let fd = match fd_solution_derivative(&entry.rhs, &entry.default_history, &dir, t, 1e-4, cfg) {
        Ok(p) => p,
        Err(_) => return Ok(vec![err_row("variational", problem)]),
    };
    Ok(vec![row("variational", problem, distance_to_path(&var, &fd), 1e-4)])
}

/// Runs a named suite; `all` runs every suite over its default problems.
pub fn run_suite(suite: &str, problem: Option<&str>, cfg: &SolverConfig) -> CheckResult<Vec<CheckRow>> {
    let p = problem.unwrap_or("");
    match suite {
        "semigroup" => semigroup(pick(p, "linear_const_delay"), cfg),
        "cocycle" => cocycle(pick(p, "pantograph"), cfg),
        "clock" => clock(pick(p, "pantograph"), cfg),
        "uniqueness" => uniqueness(pick(p, "linear_ode"), cfg),
        "contraction" => contraction(pick(p, "linear_const_delay"), cfg),
        "vide-routes" => vide_routes(pick(p, "vide_cosh"), cfg),
        "variational" => variational_check(pick(p, "quadratic"), cfg),
        "all" => {
            let mut rows = Vec::new();
            rows.extend(semigroup("linear_const_delay", cfg)?);
            rows.extend(semigroup("quadratic", cfg)?);
            rows.extend(cocycle("pantograph", cfg)?);
            rows.extend(clock("pantograph", cfg)?);
            rows.extend(uniqueness("linear_ode", cfg)?);
            for prob in ["linear_const_delay", "linear_ode", "quadratic", "state_dep_delay", "pantograph", "vide_cosh"] {
                rows.extend(contraction(prob, cfg)?);
            }
            for prob in ["vide_cosh", "vide_cos", "vide_sin"] {
                rows.extend(vide_routes(prob, cfg)?);
            }
            rows.extend(variational_check("quadratic", cfg)?);
            Ok(rows)
        }
        other => Err(UsageError(format!(
            "unknown suite '{other}' (semigroup, cocycle, clock, uniqueness, contraction, vide-routes, variational, all)"
        ))),
    }
}

fn pick<'a>(given: &'a str, default: &'a str) -> &'a str {
    if given.is_empty() {
        default
    } else {
        given
    }
}
