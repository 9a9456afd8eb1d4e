//! Nonautonomous equations via clock augmentation.
//!
//! A nonautonomous equation `x'(t) = g(t, x_t)` becomes autonomous in one
//! extra dimension by adjoining the clock `r' = 1`: the augmented
//! right-hand side is `psi -> (1, g(psi_1(0), p psi))` with `p` forgetting
//! the first component. Running the autonomous semiflow from the initial
//! pair (clock anchored at `t0`, state history) and projecting the clock
//! off yields the two-parameter process `P(t, t0, phi)` with its cocycle
//! law. The clock component is integrated numerically like any other
//! component; its exactness is one of the acceptance checks.

use std::sync::Arc;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::history::{
    seminorm_diff, with_scratch, History, HistoryFunction, SeminormIndex, TailPolicy, Trajectory,
};
use crate::rhs::{DelayHorizon, EvalFn, RhsAutonomous, RhsNonautonomous};
use crate::semiflow::{require_reached, semiflow, SemiflowRun};

/// The scalar history `u -> t0 + u` anchoring the clock at `t0`.
#[derive(Clone, Copy, Debug)]
pub struct ClockHistory {
    t0: f64,
}

impl ClockHistory {
    pub fn new(t0: f64) -> Self {
        Self { t0 }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Realization as a sampled history; linear interpolation reproduces
    /// the clock exactly at every argument and the tail closure extends it
    /// exactly below the window.
    pub fn history(&self) -> HistoryFunction {
        let t0 = self.t0;
        HistoryFunction::from_samples(
            1,
            vec![-1.0, 0.0],
            vec![t0 - 1.0, t0],
            Some(vec![1.0, 1.0]),
            TailPolicy::UserClosure(Arc::new(move |s, out| out[0] = t0 + s)),
        )
        .expect("clock samples are well-formed")
    }
}

/// View of a history with its first component removed.
pub(crate) struct ProjectTail<'a> {
    inner: &'a dyn History,
}

impl<'a> ProjectTail<'a> {
    pub(crate) fn new(inner: &'a dyn History) -> Self {
        Self { inner }
    }
}

impl History for ProjectTail<'_> {
    fn dim(&self) -> usize {
        self.inner.dim() - 1
    }

    fn eval_into(&self, s: f64, out: &mut [f64]) {
        with_scratch(self.inner.dim(), |buf| {
            self.inner.eval_into(s, buf);
            out.copy_from_slice(&buf[1..]);
        });
    }

    fn eval_deriv_into(&self, s: f64, out: &mut [f64]) -> bool {
        with_scratch(self.inner.dim(), |buf| {
            let ok = self.inner.eval_deriv_into(s, buf);
            if ok {
                out.copy_from_slice(&buf[1..]);
            }
            ok
        })
    }

    fn sample_times(&self, depth: f64) -> Vec<f64> {
        self.inner.sample_times(depth)
    }

    fn window_hint(&self) -> f64 {
        self.inner.window_hint()
    }
}

/// Joins the clock anchored at `t0` with an `n`-dimensional state history
/// into one `(n+1)`-dimensional history on the state's node set.
pub fn combine_with_clock(t0: f64, phi: &HistoryFunction) -> HistoryFunction {
    let n = phi.dim();
    let nodes = phi.nodes().to_vec();
    let mut values = Vec::with_capacity(nodes.len() * (n + 1));
    for (i, &s) in nodes.iter().enumerate() {
        values.push(t0 + s);
        values.extend_from_slice(phi.value_at_node(i));
    }
    let derivs = phi.deriv_values().map(|d| {
        let mut out = Vec::with_capacity(nodes.len() * (n + 1));
        for i in 0..nodes.len() {
            out.push(1.0);
            out.extend_from_slice(&d[i * n..(i + 1) * n]);
        }
        out
    });
    let phi_tail = phi.clone();
    let tail = TailPolicy::UserClosure(Arc::new(move |s, out| {
        out[0] = t0 + s;
        phi_tail.eval_into(s, &mut out[1..]);
    }));
    HistoryFunction::from_samples(n + 1, nodes, values, derivs, tail)
        .expect("combined samples are well-formed")
}

/// Drops the first (clock) component of a history.
pub fn project_history(psi: &HistoryFunction) -> HistoryFunction {
    let full = psi.dim();
    let n = full - 1;
    let nodes = psi.nodes().to_vec();
    let mut values = Vec::with_capacity(nodes.len() * n);
    for i in 0..nodes.len() {
        values.extend_from_slice(&psi.value_at_node(i)[1..]);
    }
    let derivs = psi.deriv_values().map(|d| {
        let mut out = Vec::with_capacity(nodes.len() * n);
        for i in 0..nodes.len() {
            out.extend_from_slice(&d[i * full + 1..(i + 1) * full]);
        }
        out
    });
    let inner = psi.clone();
    let tail = TailPolicy::UserClosure(Arc::new(move |s, out| {
        with_scratch(inner.dim(), |buf| {
            inner.eval_into(s, buf);
            out.copy_from_slice(&buf[1..]);
        });
    }));
    HistoryFunction::from_samples(n, nodes, values, derivs, tail)
        .expect("projected samples are well-formed")
}

/// Drops the first (clock) component of a trajectory.
pub fn project_trajectory(x: &Trajectory) -> Trajectory {
    let full = x.dim();
    let n = full - 1;
    let base = project_history(x.base());
    let nodes = x.fwd_nodes().to_vec();
    let mut values = Vec::with_capacity(nodes.len() * n);
    for i in 0..nodes.len() {
        values.extend_from_slice(&x.fwd_value_at(i)[1..]);
    }
    let derivs = x.fwd_derivs().map(|d| {
        let mut out = Vec::with_capacity(nodes.len() * n);
        for i in 0..nodes.len() {
            out.extend_from_slice(&d[i * full + 1..(i + 1) * full]);
        }
        out
    });
    Trajectory::new(base, nodes, values, derivs).expect("projection preserves continuity")
}

/// A nonautonomous descriptor together with its clock-augmented autonomous
/// form.
#[derive(Clone)]
pub struct AugmentedRhs {
    inner: Arc<RhsNonautonomous>,
    rhs: RhsAutonomous,
}

impl AugmentedRhs {
    pub fn inner(&self) -> &Arc<RhsNonautonomous> {
        &self.inner
    }

    /// The autonomous right-hand side `psi -> (1, g(psi_1(0), p psi))`.
    pub fn rhs(&self) -> &RhsAutonomous {
        &self.rhs
    }
}

/// Clock-augments `g`. The extra window `origin_slack` widens growing
/// delay horizons so that solves anchored at a positive `t0` retain the
/// full past the functional can reach.
pub fn augment_with_slack(g: &Arc<RhsNonautonomous>, origin_slack: f64) -> AugmentedRhs {
    let n = g.dim();
    let delay = match g.delay() {
        DelayHorizon::Fixed(d) => DelayHorizon::Fixed(d),
        DelayHorizon::Growing { base } => DelayHorizon::Growing { base: base + origin_slack },
    };
    let g_eval = Arc::clone(g);
    let eval: EvalFn = Arc::new(move |psi: &dyn History| {
        let clock = with_scratch(psi.dim(), |buf| {
            psi.eval_into(0.0, buf);
            buf[0]
        });
        let proj = ProjectTail::new(psi);
        let inner_val = g_eval.eval_g(clock, &proj)?;
        let mut out = Vec::with_capacity(inner_val.len() + 1);
        out.push(1.0);
        out.extend(inner_val);
        Ok(out)
    });
    let g_dom = Arc::clone(g);
    let rhs = RhsAutonomous::new(n + 1, delay, eval).with_domain(Arc::new(move |psi: &dyn History| {
        let clock = with_scratch(psi.dim(), |buf| {
            psi.eval_into(0.0, buf);
            buf[0]
        });
        g_dom.in_domain(clock, &ProjectTail::new(psi))
    }));
    AugmentedRhs { inner: Arc::clone(g), rhs }
}

/// Clock-augments `g` with the delay horizon inherited as declared.
pub fn augment(g: &Arc<RhsNonautonomous>) -> AugmentedRhs {
    augment_with_slack(g, 0.0)
}

/// A process evaluation `P(t, t0, phi)`: the augmented run plus the data
/// needed to project it back down.
#[derive(Clone, Debug)]
pub struct ProcessRun {
    /// Augmented run in dimension `n + 1`; the first component is the clock.
    pub run: SemiflowRun,
    pub t0: f64,
    pub duration: f64,
}

impl ProcessRun {
    /// The history `P(t, t0, phi)` (clock projected off), exact on all of
    /// `(-inf, 0]` through tail delegation.
    pub fn final_segment(&self) -> Result<HistoryFunction> {
        let depth = self.run.reached_time + self.run.initial.window_depth();
        let seg = self.run.segment_at(self.run.reached_time, depth)?;
        Ok(project_history(&seg))
    }

    /// The solution trajectory with the clock projected off.
    pub fn solution(&self) -> Trajectory {
        project_trajectory(&self.run.trajectory)
    }

    /// Worst deviation of the clock component from `u + t0` over the
    /// forward nodes.
    pub fn clock_defect(&self) -> f64 {
        let x = &self.run.trajectory;
        let dim = x.dim();
        let mut worst = 0.0_f64;
        for (i, &u) in x.fwd_nodes().iter().enumerate() {
            worst = worst.max((x.fwd_values()[i * dim] - (u + self.t0)).abs());
        }
        worst
    }
}

/// Runs the process from `(t0, phi)` up to time `t`, returning the full
/// augmented run. Failures keep the partial trajectory inside `run`.
pub fn process_run(
    g: &Arc<RhsNonautonomous>,
    t: f64,
    t0: f64,
    phi: &HistoryFunction,
    cfg: &SolverConfig,
) -> Result<ProcessRun> {
    if !(t0 <= t) {
        return Err(Error::OutOfRange { arg: t0, lo: f64::NEG_INFINITY, hi: t });
    }
    if !g.in_domain(t0, phi) {
        return Err(Error::DomainExit { t: t0 });
    }
    let aug = augment_with_slack(g, t0.max(0.0));
    let psi0 = combine_with_clock(t0, phi);
    let run = semiflow(aug.rhs(), &psi0, t - t0, cfg)?;
    Ok(ProcessRun { run, t0, duration: t - t0 })
}

/// The process value `P(t, t0, phi)`; by the augmentation equivalence this
/// is the segment `x_t` of the maximal nonautonomous solution through
/// `(t0, phi)`.
pub fn process(
    g: &Arc<RhsNonautonomous>,
    t: f64,
    t0: f64,
    phi: &HistoryFunction,
    cfg: &SolverConfig,
) -> Result<HistoryFunction> {
    let pr = process_run(g, t, t0, phi, cfg)?;
    require_reached(&pr.run, t - t0)?;
    pr.final_segment()
}

/// Cocycle defect `|P(s, t0, phi) - P(s, t, P(t, t0, phi))|_j` for
/// `t0 <= t <= s`.
pub fn check_cocycle(
    g: &Arc<RhsNonautonomous>,
    s: f64,
    t: f64,
    t0: f64,
    phi: &HistoryFunction,
    j: SeminormIndex,
    cfg: &SolverConfig,
) -> Result<f64> {
    if !(t0 <= t && t <= s) {
        return Err(Error::Invariant("cocycle requires t0 <= t <= s".into()));
    }
    let inner = process(g, t, t0, phi, cfg)?;
    let composed = process(g, s, t, &inner, cfg)?;
    let direct = process(g, s, t0, phi, cfg)?;
    Ok(seminorm_diff(&composed, &direct, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rhs::{pantograph, DelayHorizon, EvalTFn};

    fn drift(rate: f64) -> Arc<RhsNonautonomous> {
        let eval: EvalTFn = Arc::new(move |_t, _phi| Ok(vec![rate]));
        Arc::new(RhsNonautonomous::new(1, DelayHorizon::Fixed(1.0), eval))
    }

    /// g(t, phi) = t, so the augmented field is (1, psi_1(0)).
    fn clock_reader() -> Arc<RhsNonautonomous> {
        let eval: EvalTFn = Arc::new(|t, _phi| Ok(vec![t]));
        Arc::new(RhsNonautonomous::new(1, DelayHorizon::Fixed(1.0), eval))
    }

    #[test]
    fn clock_history_is_the_shifted_identity() {
        let c = ClockHistory::new(2.5).history();
        for s in [0.0, -0.3, -1.0, -7.25] {
            assert!((c.evaluate(s).unwrap()[0] - (2.5 + s)).abs() < 1e-15);
        }
    }

    #[test]
    fn augmented_field_substitutes_the_clock() {
        let g = clock_reader();
        let aug = augment(&g);
        let psi = combine_with_clock(3.0, &HistoryFunction::constant(&[9.0]));
        let v = aug.rhs().eval_f(&psi).unwrap();
        assert_eq!(v, vec![1.0, 3.0]);

        let zero: EvalTFn = Arc::new(|_t, _phi| Ok(vec![0.0]));
        let g0 = Arc::new(RhsNonautonomous::new(1, DelayHorizon::Fixed(1.0), zero));
        let v = augment(&g0).rhs().eval_f(&psi).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
    }

    #[test]
    fn augmented_pantograph_reads_the_clocked_lag() {
        // With psi_1(0) = 2 and lambda = 0.5 the delayed argument is -1.
        let g = Arc::new(pantograph(1.0, 0.0, 0.5));
        let aug = augment(&g);
        let phi = HistoryFunction::from_fn(1, 3.0, 0.01, |s| vec![s]);
        let psi = combine_with_clock(2.0, &phi);
        let v = aug.rhs().eval_f(&psi).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn process_at_t0_is_the_identity() {
        let g = drift(1.0);
        let phi = HistoryFunction::from_fn(1, 1.0, 0.1, |s| vec![s.cos()]);
        let p = process(&g, 0.5, 0.5, &phi, &SolverConfig::default()).unwrap();
        for &s in phi.nodes() {
            let a = p.evaluate(s).unwrap()[0];
            let b = phi.evaluate(s).unwrap()[0];
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn pure_drift_translates_the_head() {
        let g = drift(1.0);
        let phi = HistoryFunction::constant(&[2.0]);
        let cfg = SolverConfig::default();
        let p = process(&g, 1.25, -0.75, &phi, &cfg).unwrap();
        assert!((p.evaluate(0.0).unwrap()[0] - (2.0 + 2.0)).abs() < 1e-9);
    }

    #[test]
    fn clock_component_is_exact() {
        let g = drift(0.5);
        let phi = HistoryFunction::constant(&[1.0]);
        let pr = process_run(&g, 2.0, -1.0, &phi, &SolverConfig::default()).unwrap();
        assert!(pr.run.reached_horizon());
        assert!(pr.clock_defect() <= 1e-12, "clock defect {}", pr.clock_defect());
    }

    #[test]
    fn cocycle_trivial_cases() {
        let cfg = SolverConfig::default();
        let j = SeminormIndex::new(1).unwrap();
        let g = drift(0.0);
        let phi = HistoryFunction::constant(&[1.0]);
        // constant process
        let d = check_cocycle(&g, 1.0, 0.5, 0.0, &phi, j, &cfg).unwrap();
        assert!(d < 1e-12);
        // inner call is the identity when t = t0
        let g = clock_reader();
        let d = check_cocycle(&g, 1.0, 0.0, 0.0, &phi, j, &cfg).unwrap();
        assert!(d < 1e-9, "defect {d}");
    }

    #[test]
    fn process_matches_hand_written_pantograph_marcher() {
        // Both routes solve x'(t) = a x(lambda t) + b x(t) from x(0) = 1;
        // the marcher knows nothing about histories or fixed points.
        let (a, b, lambda) = (-1.0, 0.25, 0.5);
        let g = Arc::new(pantograph(a, b, lambda));
        let phi = HistoryFunction::constant(&[1.0]);
        let cfg = SolverConfig::default().with_grid_step(2e-3);
        let pr = process_run(&g, 2.0, 0.0, &phi, &cfg).unwrap();
        assert!(pr.run.reached_horizon());
        let x = project_trajectory(&pr.run.trajectory);
        let direct = crate::oracles::pantograph_direct(a, b, lambda, 1.0, 2.0, 2e-3).unwrap();
        let mut worst = 0.0_f64;
        for (i, &t) in direct.nodes().iter().enumerate() {
            worst = worst.max((direct.value_at(i)[0] - x.eval(t)[0]).abs());
        }
        assert!(worst <= 1e-5, "process vs marcher {worst:.3e}");
    }

    #[test]
    fn projection_round_trip() {
        let phi = HistoryFunction::from_fn(2, 1.0, 0.25, |s| vec![s, s * s]);
        let psi = combine_with_clock(4.0, &phi);
        assert_eq!(psi.dim(), 3);
        let back = project_history(&psi);
        for &s in phi.nodes() {
            assert_eq!(back.evaluate(s).unwrap(), phi.evaluate(s).unwrap());
        }
        // tail delegation below the window
        assert!((back.evaluate(-5.5).unwrap()[0] - (-5.5)).abs() < 1e-12);
    }
}
