//! Global-in-time solutions by repeated local solves.
//!
//! The semiflow value `Sigma(t, phi)` is the segment at `t` of the maximal
//! solution starting from `phi`. Continuation re-plans each step from
//! scratch at the accumulated state; when planning or iteration fails the
//! partial trajectory is kept and the failure is reported as a termination
//! reason rather than discarded.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::history::{seminorm_diff, HistoryFunction, SeminormIndex, Trajectory};
use crate::picard::{measure_contraction, plan_step, solve_local, PicardReport, StepPlan};
use crate::rhs::RhsAutonomous;

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    HorizonReached,
    StepSelectionFailed,
    DomainExit,
    Nonconvergence,
}

/// One accepted continuation step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub start_time: f64,
    pub plan: StepPlan,
    pub report: PicardReport,
}

/// A (possibly partial) solution run.
#[derive(Clone, Debug)]
pub struct SemiflowRun {
    pub initial: HistoryFunction,
    pub trajectory: Arc<Trajectory>,
    pub reached_time: f64,
    pub termination: Termination,
    pub failure: Option<Error>,
    pub steps: Vec<StepRecord>,
}

/// Compact run summary for JSON output.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub termination: Termination,
    pub reached_time: f64,
    pub steps: usize,
    pub total_picard_iterations: usize,
}

impl SemiflowRun {
    pub fn reached_horizon(&self) -> bool {
        self.termination == Termination::HorizonReached
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            termination: self.termination,
            reached_time: self.reached_time,
            steps: self.steps.len(),
            total_picard_iterations: self.steps.iter().map(|s| s.report.iterations).sum(),
        }
    }

    /// The segment `Sigma(t, phi)` of this run, materialized with the given
    /// window depth (the tail stays exact through delegation).
    pub fn segment_at(&self, t: f64, depth: f64) -> Result<HistoryFunction> {
        Trajectory::segment_owned(&self.trajectory, t, depth)
    }

    /// Value `x(t)` of the underlying solution.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        self.trajectory.evaluate(t)
    }
}

fn termination_of(err: &Error) -> Termination {
    match err {
        Error::StepSelection { .. } => Termination::StepSelectionFailed,
        Error::DomainExit { .. } => Termination::DomainExit,
        Error::Nonconvergence { .. } => Termination::Nonconvergence,
        _ => Termination::Nonconvergence,
    }
}

/// Runs the semiflow from `phi` for duration `t`: chains certified local
/// solves, extending one master trajectory. `Sigma(0, phi) = phi` exactly.
pub fn semiflow(
    f: &RhsAutonomous,
    phi: &HistoryFunction,
    t: f64,
    cfg: &SolverConfig,
) -> Result<SemiflowRun> {
    cfg.validate()?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::OutOfRange { arg: t, lo: 0.0, hi: f64::INFINITY });
    }
    let mut master = Trajectory::from_history(phi.clone());
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut termination = Termination::HorizonReached;
    let mut failure = None;
    let time_slop = 1e-12 * (1.0 + t);

    loop {
        let reached = master.horizon();
        if t - reached <= time_slop {
            break;
        }
        let snapshot = Arc::new(master.clone());
        let depth = f.delay().depth_at(reached);
        let phi_step = Trajectory::segment_owned(&snapshot, reached, depth)?;
        let plan = match plan_step(f, &phi_step, cfg) {
            Ok(p) => p.truncated(t - reached),
            Err(e) => {
                termination = termination_of(&e);
                failure = Some(e);
                break;
            }
        };
        match solve_local(f, &phi_step, &plan, cfg) {
            Ok((step_traj, report)) => {
                master.append_step(&step_traj)?;
                steps.push(StepRecord { start_time: reached, plan, report });
            }
            Err(e) => {
                // Shift domain-exit times from step-local to global.
                let e = match e {
                    Error::DomainExit { t: local } => Error::DomainExit { t: reached + local },
                    other => other,
                };
                termination = termination_of(&e);
                failure = Some(e);
                break;
            }
        }
    }

    let reached_time = master.horizon();
    Ok(SemiflowRun {
        initial: phi.clone(),
        trajectory: Arc::new(master),
        reached_time,
        termination,
        failure,
        steps,
    })
}

/// Requires the run to have reached its horizon, surfacing the recorded
/// failure otherwise.
pub fn require_reached(run: &SemiflowRun, t: f64) -> Result<()> {
    if run.reached_horizon() && run.reached_time >= t - 1e-9 * (1.0 + t) {
        return Ok(());
    }
    Err(run
        .failure
        .clone()
        .unwrap_or(Error::Horizon { requested: t, reached: run.reached_time }))
}

/// Semigroup defect `|Sigma(s, Sigma(t, phi)) - Sigma(s + t, phi)|_j`.
pub fn check_semigroup(
    f: &RhsAutonomous,
    phi: &HistoryFunction,
    s: f64,
    t: f64,
    j: SeminormIndex,
    cfg: &SolverConfig,
) -> Result<f64> {
    let first = semiflow(f, phi, t, cfg)?;
    require_reached(&first, t)?;
    let mid_depth = f.delay().depth_at(t).max(j.window());
    let psi = first.segment_at(t, mid_depth)?;
    let second = semiflow(f, &psi, s, cfg)?;
    require_reached(&second, s)?;
    let direct = semiflow(f, phi, s + t, cfg)?;
    require_reached(&direct, s + t)?;
    let a = second.segment_at(second.reached_time, j.window())?;
    let b = direct.segment_at(direct.reached_time, j.window())?;
    Ok(seminorm_diff(&a, &b, j))
}

/// Discrete uniqueness statistic: solves with two different step-length
/// caps and reports the largest difference over the shared grid lattice on
/// `[0, t]`.
pub fn check_uniqueness(
    f: &RhsAutonomous,
    phi: &HistoryFunction,
    t: f64,
    cap_a: f64,
    cap_b: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let run_a = semiflow(f, phi, t, &cfg.clone().with_max_step(cap_a))?;
    require_reached(&run_a, t)?;
    let run_b = semiflow(f, phi, t, &cfg.clone().with_max_step(cap_b))?;
    require_reached(&run_b, t)?;
    let n = (t / cfg.grid_step).round() as usize;
    let mut worst = 0.0_f64;
    for i in 0..=n {
        let ti = (i as f64 * cfg.grid_step).min(t);
        let a = run_a.trajectory.eval(ti);
        let b = run_b.trajectory.eval(ti);
        let d = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Re-derives every accepted step of a run and measures the Picard map's
/// contraction ratio over random increment pairs inside each certified
/// ball. Returns the worst ratio observed.
pub fn contraction_certificate(
    f: &RhsAutonomous,
    run: &SemiflowRun,
    cfg: &SolverConfig,
    pairs: usize,
) -> Result<f64> {
    let mut rng = StdRng::seed_from_u64(cfg.seed ^ 0xc2b2_ae3d_27d4_eb4f);
    let mut worst = 0.0_f64;
    for rec in &run.steps {
        let depth = f.delay().depth_at(rec.start_time);
        let phi_k = run.segment_at(rec.start_time, depth)?;
        let ratio = measure_contraction(f, &phi_k, &rec.plan, cfg, pairs, &mut rng)?;
        worst = worst.max(ratio);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rhs::{linear_const_delay, linear_ode, quadratic};

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn zero_horizon_returns_the_initial_history() {
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::from_fn(1, 2.0, 0.01, |s| vec![s.cos()]);
        let run = semiflow(&f, &phi, 0.0, &cfg()).unwrap();
        assert!(run.reached_horizon());
        assert_eq!(run.reached_time, 0.0);
        assert_eq!(run.steps.len(), 0);
        let seg = run.segment_at(0.0, 2.0).unwrap();
        for &s in phi.nodes() {
            assert_eq!(seg.evaluate(s).unwrap(), phi.evaluate(s).unwrap());
        }
    }

    #[test]
    fn method_of_steps_linear_delay() {
        // x' = -x(t-1), phi == 1: x(t) = 1 - t on [0,1],
        // x(t) = 1 - t + (t-1)^2/2 on [1,2].
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let run = semiflow(&f, &phi, 2.0, &cfg()).unwrap();
        assert!(run.reached_horizon(), "{:?}", run.failure);
        let x1 = run.value_at(1.0).unwrap()[0];
        let x2 = run.value_at(2.0).unwrap()[0];
        assert!(x1.abs() < 1e-9, "x(1) = {x1}");
        assert!((x2 + 0.5).abs() < 1e-9, "x(2) = {x2}");
        let x15 = run.value_at(1.5).unwrap()[0];
        assert!((x15 - (1.0 - 1.5 + 0.125)).abs() < 1e-9);
    }

    #[test]
    fn exponential_growth_reaches_e() {
        let f = linear_ode(1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let run = semiflow(&f, &phi, 1.0, &cfg()).unwrap();
        assert!(run.reached_horizon());
        let x1 = run.value_at(1.0).unwrap()[0];
        assert!((x1 - std::f64::consts::E).abs() < 1e-6, "x(1) = {x1}");
    }

    #[test]
    fn semigroup_defect_small() {
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let j = SeminormIndex::new(2).unwrap();
        let d0 = check_semigroup(&f, &phi, 0.0, 0.9, j, &cfg()).unwrap();
        assert!(d0 < 1e-12, "s = 0 defect {d0}");
        let d = check_semigroup(&f, &phi, 0.7, 0.7, j, &cfg()).unwrap();
        assert!(d < 1e-5, "defect {d}");
    }

    #[test]
    fn semigroup_trivial_for_constant_rhs() {
        let f = RhsAutonomous::new(
            1,
            crate::rhs::DelayHorizon::Fixed(1.0),
            std::sync::Arc::new(|_phi: &dyn crate::history::History| Ok(vec![0.0])),
        );
        let phi = HistoryFunction::constant(&[2.0]);
        let j = SeminormIndex::new(1).unwrap();
        let d = check_semigroup(&f, &phi, 0.4, 0.3, j, &cfg()).unwrap();
        assert!(d < 1e-12, "defect {d}");
    }

    #[test]
    fn monotone_reach_shares_prefix() {
        // With the shorter horizon placed on a step boundary of the longer
        // run, the schedules coincide and the prefix is bitwise identical.
        let f = linear_ode(1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let long = semiflow(&f, &phi, 1.0, &cfg()).unwrap();
        assert!(long.reached_horizon() && long.steps.len() >= 3);
        let t_short = long.steps[2].start_time;
        let short = semiflow(&f, &phi, t_short, &cfg()).unwrap();
        assert!(short.reached_horizon());
        let n = short.trajectory.fwd_nodes().len();
        assert_eq!(&long.trajectory.fwd_nodes()[..n], short.trajectory.fwd_nodes());
        assert_eq!(
            &long.trajectory.fwd_values()[..n],
            short.trajectory.fwd_values()
        );
    }

    #[test]
    fn blow_up_terminates_with_step_selection_failure() {
        let f = quadratic();
        let phi = HistoryFunction::constant(&[1.0]);
        let run = semiflow(&f, &phi, 2.0, &cfg()).unwrap();
        assert_eq!(run.termination, Termination::StepSelectionFailed);
        assert!(run.reached_time < 1.0, "reached {}", run.reached_time);
        assert!(run.reached_time > 0.8, "reached {}", run.reached_time);
    }

    #[test]
    fn uniqueness_under_different_schedules() {
        let f = linear_ode(1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let d = check_uniqueness(&f, &phi, 1.0, 0.5, 0.25, &cfg()).unwrap();
        assert!(d <= 1e-6, "schedules differ by {d}");
        let d0 = check_uniqueness(&f, &phi, 1.0, 0.5, 0.5, &cfg()).unwrap();
        assert_eq!(d0, 0.0);
    }

    #[test]
    fn uniqueness_trivial_for_constant_rhs() {
        let f = RhsAutonomous::new(
            1,
            crate::rhs::DelayHorizon::Fixed(1.0),
            std::sync::Arc::new(|_phi: &dyn crate::history::History| Ok(vec![0.7])),
        );
        let phi = HistoryFunction::constant(&[2.0]);
        let d = check_uniqueness(&f, &phi, 1.0, 0.5, 0.125, &cfg()).unwrap();
        assert!(d < 1e-12, "constant slope schedules differ by {d}");
    }

    #[test]
    fn types_are_shareable_and_runs_parallelize() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<HistoryFunction>();
        assert_send_sync::<Trajectory>();
        assert_send_sync::<crate::history::ForwardPath>();
        assert_send_sync::<RhsAutonomous>();
        assert_send_sync::<crate::rhs::RhsNonautonomous>();
        assert_send_sync::<SemiflowRun>();

        let f = std::sync::Arc::new(linear_const_delay(-1.0, 1.0));
        let handles: Vec<_> = (0..3)
            .map(|k| {
                let f = std::sync::Arc::clone(&f);
                std::thread::spawn(move || {
                    let phi = HistoryFunction::constant(&[1.0 + k as f64]);
                    semiflow(&f, &phi, 1.0, &SolverConfig::default()).unwrap()
                })
            })
            .collect();
        for (k, h) in handles.into_iter().enumerate() {
            let run = h.join().unwrap();
            assert!(run.reached_horizon());
            // linear equation: x(1) = (1+k) * x_unit(1)
            let unit = 1.0 - 1.0; // x_unit(1) = 0 for this problem
            assert!((run.value_at(1.0).unwrap()[0] - (1.0 + k as f64) * unit).abs() < 1e-9);
        }
    }

    #[test]
    fn contraction_certificate_for_linear_delay() {
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let c = cfg();
        let run = semiflow(&f, &phi, 2.0, &c).unwrap();
        let worst = contraction_certificate(&f, &run, &c, 10).unwrap();
        assert!(worst <= 0.6, "worst ratio {worst}");
    }
}
