//! The variational equation along a computed trajectory.
//!
//! For a solution `x` of `x' = f(x_t)` and a direction `phi_hat`, the
//! directional derivative of the solution operator is realized by the
//! linear nonautonomous equation `v'(u) = Df(x_u) v_u` with `v_0 =
//! phi_hat`. It is solved with the same Picard machinery through a clock
//! augmentation whose coefficients are read off the frozen base run, on
//! the base run's own step schedule, so runs in different directions share
//! their grids exactly and the map `phi_hat -> v` stays linear to rounding.
//! The independent oracle is a central difference of two perturbed
//! re-solves.

use std::sync::Arc;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::history::{
    axpy_history, segment, with_scratch, ForwardPath, History, HistoryFunction, Trajectory,
};
use crate::numerics::Tolerance;
use crate::picard::{plan_from_parts, probe_directions, solve_local};
use crate::process::{combine_with_clock, project_trajectory, ProjectTail};
use crate::rhs::{EvalFn, RhsAutonomous};
use crate::semiflow::{require_reached, semiflow, SemiflowRun, StepRecord};

/// A solved variational equation: the direction and the linearized
/// trajectory `v` on `(-inf, t]` with `v_0` equal to the direction.
#[derive(Clone, Debug)]
pub struct VariationalRun {
    pub base: SemiflowRun,
    pub direction: HistoryFunction,
    pub v: Trajectory,
    pub reached_time: f64,
    pub steps: Vec<StepRecord>,
}

/// Tight tolerances for the linear sweeps: the iteration is exactly linear
/// in the direction, so driving the truncation near rounding keeps
/// linearity observable.
fn variational_tolerance() -> Tolerance {
    Tolerance::new(1e-13, 1e-12, 120).unwrap()
}

/// The clock-augmented variational right-hand side
/// `psi -> (1, Df(x_{psi_1(0)}) (p psi))` along the frozen base trajectory.
fn variational_rhs(f: &RhsAutonomous, base: &SemiflowRun) -> RhsAutonomous {
    let traj = Arc::clone(&base.trajectory);
    let f_inner = f.clone();
    let reach = base.reached_time;
    let eval: EvalFn = Arc::new(move |psi: &dyn History| {
        let u = with_scratch(psi.dim(), |b| {
            psi.eval_into(0.0, b);
            b[0]
        })
        .clamp(0.0, reach);
        let depth = f_inner.delay().depth_at(u);
        let x_u = segment(&traj, u, depth)?;
        let dv = f_inner.eval_df(&x_u, &ProjectTail::new(psi))?;
        let mut out = Vec::with_capacity(dv.len() + 1);
        out.push(1.0);
        out.extend(dv);
        Ok(out)
    });
    RhsAutonomous::new(f.dim() + 1, f.delay(), eval)
}

/// Largest |Df(x_u) chi| over probe times of one step and unit probe
/// directions; doubled as the step's Lipschitz surrogate. Independent of
/// the direction being solved for, so schedules are shared.
fn probe_variational_lipschitz(
    f: &RhsAutonomous,
    base: &SemiflowRun,
    start: f64,
    len: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let window = f.delay().depth_at(start + len).max(cfg.grid_step);
    let dirs = probe_directions(f.dim(), window, cfg);
    let mut worst = 0.0_f64;
    for frac in [0.0, 0.5, 1.0] {
        let u = (start + frac * len).min(base.reached_time);
        let x_u = segment(&base.trajectory, u, f.delay().depth_at(u))?;
        for d in &dirs {
            let v = f.eval_df(&x_u, d)?;
            worst = worst.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    Ok(2.0 * worst)
}

/// Solves `v' = Df(x_u) v_u`, `v_0 = phi_hat`, along `base` up to `t`,
/// replaying the base run's step schedule (splitting a step only if the
/// probed coefficient bound demands it).
pub fn solve_variational(
    f: &RhsAutonomous,
    base: &SemiflowRun,
    direction: &HistoryFunction,
    t: f64,
    cfg: &SolverConfig,
) -> Result<VariationalRun> {
    require_reached(base, t)?;
    if direction.dim() != f.dim() {
        return Err(Error::Invariant("direction dimension mismatch".into()));
    }
    let rhs = variational_rhs(f, base);
    let mut cfg_v = cfg.clone();
    cfg_v.tol = variational_tolerance();

    let mut master = Trajectory::from_history(combine_with_clock(0.0, direction));
    let mut steps = Vec::new();
    let time_slop = 1e-12 * (1.0 + t);

    'steps: for rec in &base.steps {
        let reached = master.horizon();
        if t - reached <= time_slop {
            break;
        }
        let len = rec.plan.step().min(t - reached);
        let lips = probe_variational_lipschitz(f, base, reached, len, cfg)?;
        // Split the replayed step if the frozen-coefficient bound requires
        // a shorter contraction interval than the base run used.
        let mut pieces = if lips > 0.0 { (lips * len / 0.5).ceil() as usize } else { 1 };
        pieces = pieces.clamp(1, (len / cfg.grid_step).round().max(1.0) as usize);
        let piece_len = len / pieces as f64;
        for _ in 0..pieces {
            let reached = master.horizon();
            if t - reached <= time_slop {
                break 'steps;
            }
            let snapshot = Arc::new(master.clone());
            let depth = f.delay().depth_at(reached);
            let psi = Trajectory::segment_owned(&snapshot, reached, depth)?;
            let eps = cfg.ball_factor * (1.0 + crate::numerics::window_scale(&psi));
            let plan =
                plan_from_parts(piece_len.min(t - reached), cfg.grid_step, lips, eps);
            let (step_traj, report) = solve_local(&rhs, &psi, &plan, &cfg_v)?;
            master.append_step(&step_traj)?;
            steps.push(StepRecord { start_time: reached, plan, report });
        }
    }

    let reached_time = master.horizon();
    if t - reached_time > 1e-9 * (1.0 + t) {
        return Err(Error::Horizon { requested: t, reached: reached_time });
    }
    // Project the clock off; the returned v keeps the original direction as
    // its history, so v_0 = phi_hat holds bitwise at the nodes.
    let projected = project_trajectory(&master);
    let v = Trajectory::new(
        direction.clone(),
        projected.fwd_nodes().to_vec(),
        projected.fwd_values().to_vec(),
        projected.fwd_derivs().map(|d| d.to_vec()),
    )?;
    Ok(VariationalRun {
        base: base.clone(),
        direction: direction.clone(),
        v,
        reached_time,
        steps,
    })
}

/// Central-difference derivative of the solution map: re-solves from
/// `phi ± h * phi_hat` and differences the trajectories on the grid
/// lattice of `[0, t]`. The independent oracle for
/// [`solve_variational`].
pub fn fd_solution_derivative(
    f: &RhsAutonomous,
    phi: &HistoryFunction,
    direction: &HistoryFunction,
    t: f64,
    h: f64,
    cfg: &SolverConfig,
) -> Result<ForwardPath> {
    if !(h > 0.0) {
        return Err(Error::Invariant("finite-difference step must be positive".into()));
    }
    let plus = semiflow(f, &axpy_history(1.0, phi, h, direction)?, t, cfg)?;
    require_reached(&plus, t)?;
    let minus = semiflow(f, &axpy_history(1.0, phi, -h, direction)?, t, cfg)?;
    require_reached(&minus, t)?;
    let dim = f.dim();
    let n = (t / cfg.grid_step).round().max(1.0) as usize;
    let mut nodes = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity((n + 1) * dim);
    for i in 0..=n {
        let ti = if i == n { t } else { i as f64 * cfg.grid_step };
        nodes.push(ti);
        let a = plus.trajectory.eval(ti);
        let b = minus.trajectory.eval(ti);
        values.extend(a.iter().zip(&b).map(|(p, m)| (p - m) / (2.0 * h)));
    }
    ForwardPath::new(dim, nodes, values, false)
}

/// Largest node-wise distance between a variational solution and an FD
/// path on the FD path's grid.
pub fn distance_to_path(run: &VariationalRun, path: &ForwardPath) -> f64 {
    let dim = run.v.dim();
    let mut worst = 0.0_f64;
    let mut buf = vec![0.0; dim];
    for (i, &ti) in path.nodes().iter().enumerate() {
        run.v.eval_into(ti, &mut buf);
        let p = path.value_at(i);
        let d = buf.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        worst = worst.max(d);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rhs::{linear_const_delay, quadratic};

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn linear_rhs_variational_equals_semiflow() {
        // For linear f the variational equation is the equation itself.
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let c = cfg();
        let base = semiflow(&f, &phi, 1.5, &c).unwrap();
        let dir = HistoryFunction::from_fn(1, 1.0, 1e-3, |s| vec![s.cos()]);
        let var = solve_variational(&f, &base, &dir, 1.5, &c).unwrap();
        let flow = semiflow(&f, &dir, 1.5, &c).unwrap();
        assert!(flow.reached_horizon());
        let n = (1.5 / c.grid_step).round() as usize;
        for i in 0..=n {
            let ti = (i as f64 * c.grid_step).min(1.5);
            let a = var.v.eval(ti)[0];
            let b = flow.trajectory.eval(ti)[0];
            assert!((a - b).abs() < 1e-8, "t = {ti}: {a} vs {b}");
        }
    }

    #[test]
    fn zero_direction_gives_zero_solution() {
        let f = quadratic();
        let phi = HistoryFunction::constant(&[1.0]);
        let c = cfg();
        let base = semiflow(&f, &phi, 0.5, &c).unwrap();
        let dir = HistoryFunction::constant(&[0.0]);
        let var = solve_variational(&f, &base, &dir, 0.5, &c).unwrap();
        for i in 0..var.v.fwd_nodes().len() {
            assert_eq!(var.v.fwd_value_at(i)[0], 0.0);
        }
    }

    #[test]
    fn quadratic_solution_derivative_closed_form() {
        // x' = x^2 from phi == 1: x(t) = 1/(1-t); perturbing the constant
        // initial value by eps gives d x / d eps = 1/(1-t)^2.
        let f = quadratic();
        let phi = HistoryFunction::constant(&[1.0]);
        let c = cfg();
        let base = semiflow(&f, &phi, 0.5, &c).unwrap();
        let dir = HistoryFunction::constant(&[1.0]);
        let var = solve_variational(&f, &base, &dir, 0.5, &c).unwrap();
        for ti in [0.0_f64, 0.25, 0.5] {
            let expect = 1.0 / (1.0 - ti).powi(2);
            let got = var.v.eval(ti)[0];
            // the coefficient path is itself O(dt^2) off, which compounds
            assert!((got - expect).abs() < 5e-5, "t = {ti}: {got} vs {expect}");
        }
    }

    #[test]
    fn fd_oracle_matches_variational() {
        let f = quadratic();
        let phi = HistoryFunction::constant(&[1.0]);
        let c = cfg();
        let base = semiflow(&f, &phi, 0.5, &c).unwrap();
        let dir = HistoryFunction::constant(&[1.0]);
        let var = solve_variational(&f, &base, &dir, 0.5, &c).unwrap();
        let fd = fd_solution_derivative(&f, &phi, &dir, 0.5, 1e-4, &c).unwrap();
        let d = distance_to_path(&var, &fd);
        assert!(d <= 1e-4, "distance {d}");
    }

    #[test]
    fn linear_in_the_direction() {
        let f = quadratic();
        let phi = HistoryFunction::constant(&[1.0]);
        let c = cfg();
        let base = semiflow(&f, &phi, 0.5, &c).unwrap();
        let d1 = HistoryFunction::from_fn(1, 1.0, 1e-2, |s| vec![1.0 + s]);
        let d2 = HistoryFunction::from_fn(1, 1.0, 1e-2, |s| vec![(2.0 * s).cos()]);
        let combo = axpy_history(2.0, &d1, -0.5, &d2).unwrap();
        let v1 = solve_variational(&f, &base, &d1, 0.5, &c).unwrap();
        let v2 = solve_variational(&f, &base, &d2, 0.5, &c).unwrap();
        let vc = solve_variational(&f, &base, &combo, 0.5, &c).unwrap();
        let n = (0.5 / c.grid_step).round() as usize;
        for i in (0..=n).step_by(25) {
            let ti = (i as f64 * c.grid_step).min(0.5);
            let lhs = vc.v.eval(ti)[0];
            let rhs = 2.0 * v1.v.eval(ti)[0] - 0.5 * v2.v.eval(ti)[0];
            assert!((lhs - rhs).abs() < 1e-10, "t = {ti}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn shifted_history_identity() {
        // v_t(s) = phi_hat(t+s) whenever t + s <= 0.
        let f = quadratic();
        let phi = HistoryFunction::constant(&[1.0]);
        let c = cfg();
        let base = semiflow(&f, &phi, 0.5, &c).unwrap();
        let dir = HistoryFunction::from_fn(1, 2.0, 1e-2, |s| vec![s.sin()]);
        let var = solve_variational(&f, &base, &dir, 0.5, &c).unwrap();
        let t = 0.5;
        let v_arc = Arc::new(var.v.clone());
        let v_t = Trajectory::segment_owned(&v_arc, t, 3.0).unwrap();
        for &s in &[-0.5, -0.75, -1.0, -2.0] {
            if t + s <= 0.0 {
                let a = v_t.evaluate(s).unwrap()[0];
                let b = dir.evaluate(t + s).unwrap()[0];
                assert!((a - b).abs() < 1e-12, "s = {s}: {a} vs {b}");
            }
        }
    }
}
