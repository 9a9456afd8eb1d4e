//! Independent oracles used by the verification suites.
//!
//! Everything here deliberately avoids the fixed-point machinery: power
//! series with recursively matched coefficients and plain
//! predictor-corrector marchers, so agreement with the solver is evidence
//! rather than tautology.

use crate::error::{Error, Result};
use crate::history::ForwardPath;

/// Coefficients of the power series solution of the pantograph equation
/// `x'(t) = a x(lambda t) + b x(t)`, `x(0) = 1`: substituting
/// `x = sum c_k t^k` and matching powers gives
/// `c_{k+1} = (a lambda^k + b) c_k / (k + 1)`.
pub fn pantograph_series_coeffs(a: f64, b: f64, lambda: f64, terms: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(terms + 1);
    c.push(1.0);
    for k in 0..terms {
        let next = (a * lambda.powi(k as i32) + b) * c[k] / (k as f64 + 1.0);
        c.push(next);
    }
    c
}

/// Evaluates a power series by Horner's rule.
pub fn eval_series(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Hand-written marcher for the pantograph equation from `x(0) = x0` on
/// `[0, T]`: one predictor-corrector sweep per step with the proportional
/// argument `lambda t` looked up by linear interpolation in the stored
/// lattice. For `lambda` in `(0, 1)` and `t >= 0` the lookup never leaves
/// `[0, t]`.
pub fn pantograph_direct(a: f64, b: f64, lambda: f64, x0: f64, horizon: f64, dt: f64) -> Result<ForwardPath> {
    if !(horizon > 0.0 && dt > 0.0) || !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Invariant("pantograph marcher needs T, dt > 0 and lambda in (0,1)".into()));
    }
    let m = (horizon / dt).round().max(1.0) as usize;
    let nodes: Vec<f64> = (0..=m).map(|i| if i == m { horizon } else { i as f64 * dt }).collect();
    let mut x = vec![0.0; m + 1];
    x[0] = x0;
    let lookup = |x: &[f64], upto: usize, pred: f64, t: f64| -> f64 {
        // linear interpolation over nodes 0..=upto, with `pred` standing in
        // for the not-yet-committed value at upto+1
        let pos = t / dt;
        let i = (pos.floor() as usize).min(upto);
        let frac = pos - i as f64;
        let right = if i + 1 <= upto { x[i + 1] } else { pred };
        x[i] + frac * (right - x[i])
    };
    for i in 0..m {
        let ti = nodes[i];
        let slope_i = a * lookup(&x, i, x[i], lambda * ti) + b * x[i];
        let pred = x[i] + dt * slope_i;
        let t_next = nodes[i + 1];
        let slope_next = a * lookup(&x, i, pred, lambda * t_next) + b * pred;
        x[i + 1] = x[i] + 0.5 * dt * (slope_i + slope_next);
    }
    ForwardPath::new(1, nodes, x, false)
}
