//! Named problems addressable from the command line.

use std::sync::Arc;

use ddeflow::history::HistoryFunction;
use ddeflow::rhs::{linear_const_delay, linear_ode, pantograph, quadratic, state_dep_delay};
use ddeflow::rhs::{RhsAutonomous, RhsNonautonomous};
use ddeflow::vide::{vide_cos, vide_cosh, vide_sin, VideProblem};

use crate::UsageError;

/// A problem name with optional parenthesized parameters, e.g.
/// `linear_const_delay(-1,1)`.
pub fn parse_problem_name(spec: &str) -> Result<(String, Vec<f64>), UsageError> {
    let spec = spec.trim();
    if let Some(open) = spec.find('(') {
        if !spec.ends_with(')') {
            return Err(UsageError(format!("malformed problem spec '{spec}'")));
        }
        let name = spec[..open].trim().to_string();
        let inner = &spec[open + 1..spec.len() - 1];
        let mut params = Vec::new();
        if !inner.trim().is_empty() {
            for part in inner.split(',') {
                params.push(
                    part.trim()
                        .parse::<f64>()
                        .map_err(|e| UsageError(format!("bad parameter '{part}': {e}")))?,
                );
            }
        }
        Ok((name, params))
    } else {
        Ok((spec.to_string(), Vec::new()))
    }
}

fn param(params: &[f64], i: usize, default: f64) -> f64 {
    params.get(i).copied().unwrap_or(default)
}

/// An autonomous registry problem with its default initial history and
/// default horizon.
pub struct AutonomousEntry {
    pub rhs: RhsAutonomous,
    pub default_history: HistoryFunction,
    pub default_horizon: f64,
}

pub fn autonomous(spec: &str) -> Result<AutonomousEntry, UsageError> {
    let (name, p) = parse_problem_name(spec)?;
    let one = HistoryFunction::constant(&[1.0]);
    match name.as_str() {
        "linear_const_delay" => Ok(AutonomousEntry {
            rhs: linear_const_delay(param(&p, 0, -1.0), param(&p, 1, 1.0)),
            default_history: one,
            default_horizon: 2.0,
        }),
        "linear_ode" => Ok(AutonomousEntry {
            rhs: linear_ode(param(&p, 0, 1.0)),
            default_history: one,
            default_horizon: 1.0,
        }),
        "quadratic" => Ok(AutonomousEntry {
            rhs: quadratic(),
            default_history: one,
            default_horizon: 0.5,
        }),
        "state_dep_delay" => Ok(AutonomousEntry {
            rhs: state_dep_delay(param(&p, 0, -1.0), param(&p, 1, 4.0)),
            default_history: HistoryFunction::constant(&[0.5]),
            default_horizon: 1.0,
        }),
        other => Err(UsageError(format!(
            "unknown autonomous problem '{other}' (try linear_const_delay, linear_ode, quadratic, state_dep_delay)"
        ))),
    }
}

pub struct NonautonomousEntry {
    pub rhs: Arc<RhsNonautonomous>,
    pub default_history: HistoryFunction,
    pub default_horizon: f64,
}

pub fn nonautonomous(spec: &str) -> Result<NonautonomousEntry, UsageError> {
    let (name, p) = parse_problem_name(spec)?;
    match name.as_str() {
        "pantograph" => Ok(NonautonomousEntry {
            rhs: Arc::new(pantograph(param(&p, 0, -1.0), param(&p, 1, 0.0), param(&p, 2, 0.5))),
            default_history: HistoryFunction::constant(&[1.0]),
            default_horizon: 2.0,
        }),
        other => Err(UsageError(format!("unknown nonautonomous problem '{other}' (try pantograph)"))),
    }
}

pub struct VideEntry {
    pub problem: Arc<VideProblem>,
    pub default_horizon: f64,
}

pub fn vide(spec: &str) -> Result<VideEntry, UsageError> {
    let (name, _p) = parse_problem_name(spec)?;
    let problem = match name.as_str() {
        "vide_cosh" | "cosh" => vide_cosh(),
        "vide_cos" | "cos" => vide_cos(),
        "vide_sin" | "sin" => vide_sin(),
        other => {
            return Err(UsageError(format!(
                "unknown VIDE problem '{other}' (try vide_cosh, vide_cos, vide_sin)"
            )))
        }
    };
    Ok(VideEntry { problem: Arc::new(problem), default_horizon: 2.0 })
}

/// Parses a history spec: `const:c[,c2,...]`, `linear:a,b` for `a + b s`,
/// or `samples:path.csv`.
pub fn parse_history(spec: &str) -> Result<HistoryFunction, UsageError> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| UsageError(format!("history spec '{spec}' needs the form kind:args")))?;
    match kind {
        "const" => {
            let vals: Result<Vec<f64>, _> = rest.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| UsageError(format!("bad constant history: {e}")))?;
            Ok(HistoryFunction::constant(&vals))
        }
        "linear" => {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 2 {
                return Err(UsageError("linear history needs 'linear:a,b'".into()));
            }
            let a: f64 = parts[0].trim().parse().map_err(|e| UsageError(format!("{e}")))?;
            let b: f64 = parts[1].trim().parse().map_err(|e| UsageError(format!("{e}")))?;
            Ok(HistoryFunction::from_fn_deriv(
                1,
                4.0,
                0.5,
                move |s| vec![a + b * s],
                move |_s| vec![b],
            ))
        }
        "samples" => {
            let mut file = std::fs::File::open(rest.trim())
                .map_err(|e| UsageError(format!("cannot open '{rest}': {e}")))?;
            ddeflow::history::read_history_csv(&mut file)
                .map_err(|e| UsageError(format!("cannot parse '{rest}': {e}")))
        }
        other => Err(UsageError(format!("unknown history kind '{other}' (const, linear, samples)"))),
    }
}
