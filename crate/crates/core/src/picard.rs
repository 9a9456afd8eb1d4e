//! The fixed-point core.
//!
//! A solution increment on `[0, S]` is a fixed point of the Picard map
//! `eta -> I(F(J(eta, phi)))`: concatenate the increment with the initial
//! history, substitute the right-hand side along the result, and integrate
//! from `0`. Steps are sized so the map is a contraction with constant at
//! most `1/2` on a ball around `0`, which makes the iteration converge
//! geometrically and certifiably.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::history::{concat, segment, ForwardPath, HistoryFunction, Trajectory};
use crate::numerics::QuadratureRule;
use crate::numerics::window_scale;
use crate::rhs::RhsAutonomous;

/// Largest contraction bound accepted for a step.
const KAPPA_MAX: f64 = 0.5;

/// Smallness fraction of the ball radius required of `B_S(0, phi)`.
const SMALLNESS_FRACTION: f64 = 8.0;

/// An accepted step: length, grid, and the contraction data that justified
/// accepting it.
#[derive(Clone, Debug)]
pub struct StepPlan {
    step: f64,
    n_panels: usize,
    h: f64,
    /// Empirical local Lipschitz bound (probe maximum times safety 2).
    pub lipschitz_est: f64,
    /// Radius of the iterate ball around the zero increment.
    pub eps: f64,
    /// `lipschitz_est * step`; at most `1/2` on acceptance.
    pub contraction_bound: f64,
}

impl StepPlan {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_panels(&self) -> usize {
        self.n_panels
    }

    pub fn grid_spacing(&self) -> f64 {
        self.h
    }

    /// Grid nodes `0, h, 2h, ..., S` of the step.
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_panels)
            .map(|i| if i == self.n_panels { self.step } else { i as f64 * self.h })
            .collect()
    }

    /// Shortens the plan to `remaining` if it overshoots; contraction and
    /// smallness bounds are monotone in the step length, so the certificate
    /// survives.
    pub fn truncated(&self, remaining: f64) -> StepPlan {
        if self.step <= remaining {
            return self.clone();
        }
        let (step, n_panels, h) = snap_step(remaining, self.h);
        StepPlan {
            step,
            n_panels,
            h,
            lipschitz_est: self.lipschitz_est,
            eps: self.eps,
            contraction_bound: self.lipschitz_est * step,
        }
    }
}

/// Snaps a tentative step length onto the grid: a whole number of panels of
/// width `grid_step` when the step is at least one panel long, two half
/// panels below that.
fn snap_step(s: f64, grid_step: f64) -> (f64, usize, f64) {
    if s >= grid_step {
        let n = ((s / grid_step) + 1e-9).floor().max(1.0) as usize;
        (n as f64 * grid_step, n, grid_step)
    } else {
        (s, 2, s / 2.0)
    }
}

/// Convergence diagnostics of one local solve.
#[derive(Clone, Debug, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    pub residual: f64,
    pub ratios: Vec<f64>,
}

/// The substitution operator: samples `f` along the segments of `xi` at
/// every forward grid node. Fails with the first time at which the segment
/// leaves the domain of `f`.
pub fn substitute(f: &RhsAutonomous, xi: &Trajectory) -> Result<ForwardPath> {
    let dim = f.dim();
    let nodes = xi.fwd_nodes().to_vec();
    let mut values = Vec::with_capacity(nodes.len() * dim);
    let base_depth = xi.base().window_depth();
    for &t in &nodes {
        let seg = segment(xi, t, base_depth + t)?;
        match f.eval_f(&seg) {
            Ok(v) => values.extend_from_slice(&v),
            Err(Error::DomainExit { .. }) => return Err(Error::DomainExit { t }),
            Err(e) => return Err(e),
        }
    }
    ForwardPath::new(dim, nodes, values, false)
}

/// The integration operator: cumulative integral of a sampled path from
/// `0`, yielding an increment that vanishes at the origin.
pub fn integrate_path(psi: &ForwardPath, rule: &QuadratureRule) -> Result<ForwardPath> {
    let nodes = psi.nodes();
    if nodes.len() == 1 {
        return Ok(ForwardPath::zeros(psi.dim(), nodes.to_vec()));
    }
    let h = nodes[1] - nodes[0];
    for w in nodes.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h {
            return Err(Error::Misaligned("path nodes must be uniform".into()));
        }
    }
    let values = rule.cumulative(h, psi.values(), psi.dim());
    ForwardPath::new(psi.dim(), nodes.to_vec(), values, true)
}

/// One application of the Picard map `B(eta, phi)`.
pub fn picard_map(
    f: &RhsAutonomous,
    eta: &ForwardPath,
    phi: &HistoryFunction,
    rule: &QuadratureRule,
) -> Result<ForwardPath> {
    let xi = concat(eta, phi)?;
    let psi = substitute(f, &xi)?;
    integrate_path(&psi, rule)
}

/// Smooth probe directions of unit sup-norm used for the Lipschitz
/// estimate: a few coordinate constants plus seeded random cosine shapes.
pub(crate) fn probe_directions(dim: usize, window: f64, cfg: &SolverConfig) -> Vec<HistoryFunction> {
    let mut dirs = Vec::new();
    for k in 0..dim.min(3) {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        dirs.push(HistoryFunction::constant(&v));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let w = window.max(cfg.grid_step);
    for _ in 0..cfg.probe_directions {
        let omega = rng.random_range(0.5..6.0) / w;
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let mut unit: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = unit.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            unit = vec![0.0; dim];
            unit[0] = 1.0;
        } else {
            unit.iter_mut().for_each(|x| *x /= norm);
        }
        let step = (w / 16.0).max(1e-6);
        dirs.push(HistoryFunction::from_fn(dim, w, step, move |s| {
            let c = (omega * s + theta).cos();
            unit.iter().map(|u| c * u).collect()
        }));
    }
    dirs
}

/// Chooses a step length for which the Picard map is certifiably a
/// contraction near `phi`: probe an empirical Lipschitz bound, enforce
/// `L * S <= 1/2`, then shrink until the first iterate from zero stays
/// well inside the iterate ball.
pub fn plan_step(f: &RhsAutonomous, phi: &HistoryFunction, cfg: &SolverConfig) -> Result<StepPlan> {
    cfg.validate()?;
    if !f.in_domain(phi) {
        return Err(Error::DomainExit { t: 0.0 });
    }
    let eps = cfg.ball_factor * (1.0 + window_scale(phi));
    let window = phi.window_depth().max(f.delay().nominal());
    let dirs = probe_directions(f.dim(), window, cfg);

    // Probe |Df| at phi and at two perturbed histories inside the ball.
    let mut states = vec![phi.clone()];
    for (sign, d) in [(1.0, &dirs[0]), (-1.0, dirs.last().unwrap())] {
        if let Ok(p) = crate::history::axpy_history(1.0, phi, sign * eps / 2.0, d) {
            if f.in_domain(&p) {
                states.push(p);
            }
        }
    }
    let mut probe_max = 0.0_f64;
    for st in &states {
        for d in &dirs {
            let v = f.eval_df(st, d)?;
            probe_max = probe_max.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    let lipschitz_est = 2.0 * probe_max;

    let mut s = f.delay().nominal().max(cfg.grid_step).min(1.0).min(cfg.max_step);
    if lipschitz_est > 0.0 {
        s = s.min(KAPPA_MAX / lipschitz_est);
    }
    if s < cfg.s_min {
        return Err(Error::StepSelection { step: s, min: cfg.s_min });
    }

    let rule = cfg.quadrature_rule();
    let mut halvings = 0;
    loop {
        let (step, n_panels, h) = snap_step(s, cfg.grid_step);
        let plan = StepPlan {
            step,
            n_panels,
            h,
            lipschitz_est,
            eps,
            contraction_bound: lipschitz_est * step,
        };
        let small_enough = match picard_map(f, &ForwardPath::zeros(f.dim(), plan.nodes()), phi, &rule)
        {
            Ok(b0) => b0.sup_norm() < eps / SMALLNESS_FRACTION,
            // A domain exit during the probe also means the step is too long.
            Err(Error::DomainExit { .. }) => false,
            Err(e) => return Err(e),
        };
        if small_enough {
            return Ok(plan);
        }
        halvings += 1;
        s /= 2.0;
        if s < cfg.s_min || halvings > cfg.max_halvings {
            return Err(Error::StepSelection { step: s, min: cfg.s_min });
        }
    }
}

/// Iterates the Picard map from the zero increment until the successive
/// difference drops below tolerance, then assembles the solution segment
/// with its derivative samples `f(x_t)`.
pub fn solve_local(
    f: &RhsAutonomous,
    phi: &HistoryFunction,
    plan: &StepPlan,
    cfg: &SolverConfig,
) -> Result<(Trajectory, PicardReport)> {
    let rule = cfg.quadrature_rule();
    let tol = cfg.tol;
    let nodes = plan.nodes();
    let dim = f.dim();
    let mut eta = ForwardPath::zeros(dim, nodes.clone());
    let mut ratios = Vec::new();
    let mut residual = f64::INFINITY;
    let mut prev_residual = f64::NAN;
    let mut last_psi: Option<ForwardPath> = None;

    for iteration in 1..=tol.max_iters {
        let xi = concat(&eta, phi)?;
        let psi = substitute(f, &xi)?;
        let next = integrate_path(&psi, &rule)?;
        residual = next.sup_distance(&eta);
        if iteration > 1 && prev_residual > 0.0 {
            ratios.push(residual / prev_residual);
        }
        prev_residual = residual;
        eta = next;
        last_psi = Some(psi);
        if residual <= tol.threshold(eta.sup_norm()) {
            let mut x = concat(&eta, phi)?;
            // One more substitution along the final iterate yields the
            // derivative samples consistent with x' = f(x_t).
            let deriv = substitute(f, &x)?;
            x.set_fwd_derivs(deriv.values().to_vec())?;
            let report = PicardReport { iterations: iteration, residual, ratios };
            return Ok((x, report));
        }
    }
    let _ = last_psi;
    Err(Error::Nonconvergence { iterations: tol.max_iters, residual })
}

/// Draws a random increment of sup-norm at most `amp` vanishing at the
/// origin, for contraction measurements.
pub fn random_increment(
    dim: usize,
    nodes: &[f64],
    amp: f64,
    rng: &mut StdRng,
) -> ForwardPath {
    let s = nodes.last().copied().unwrap_or(1.0).max(1e-12);
    let omega = rng.random_range(1.0..3.0) * std::f64::consts::PI / s;
    let mut unit: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = unit.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-6 {
        unit[0] = 1.0;
    } else {
        unit.iter_mut().for_each(|x| *x /= norm);
    }
    let mut values = Vec::with_capacity(nodes.len() * dim);
    for &t in nodes {
        let c = amp * (omega * t).sin();
        values.extend(unit.iter().map(|u| c * u));
    }
    for k in 0..dim {
        values[k] = 0.0;
    }
    ForwardPath::new(dim, nodes.to_vec(), values, true).expect("well-formed increment")
}

/// Measures the worst contraction ratio of the Picard map over random
/// increment pairs inside the certified ball.
pub fn measure_contraction(
    f: &RhsAutonomous,
    phi: &HistoryFunction,
    plan: &StepPlan,
    cfg: &SolverConfig,
    pairs: usize,
    rng: &mut StdRng,
) -> Result<f64> {
    let rule = cfg.quadrature_rule();
    let nodes = plan.nodes();
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        let a = random_increment(f.dim(), &nodes, plan.eps / 2.0, rng);
        let b = random_increment(f.dim(), &nodes, plan.eps / 2.0, rng);
        let denom = a.sup_distance(&b);
        if denom < 1e-14 {
            continue;
        }
        let fa = picard_map(f, &a, phi, &rule)?;
        let fb = picard_map(f, &b, phi, &rule)?;
        worst = worst.max(fa.sup_distance(&fb) / denom);
    }
    Ok(worst)
}

/// Builds a plan directly from known data, bypassing the probing search.
/// Used where a schedule is replayed (variational solves along a frozen
/// trajectory).
pub fn plan_from_parts(step: f64, grid_step: f64, lipschitz_est: f64, eps: f64) -> StepPlan {
    let (step, n_panels, h) = snap_step(step, grid_step);
    StepPlan { step, n_panels, h, lipschitz_est, eps, contraction_bound: lipschitz_est * step }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use crate::history::{prolong_const, History};
    use crate::rhs::{linear_const_delay, linear_ode, quadratic};
    use crate::numerics::QuadratureKind;

    fn grid(s: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| if i == n { s } else { i as f64 * (s / n as f64) }).collect()
    }

    #[test]
    fn substitute_constant_rhs() {
        let f = RhsAutonomous::new(
            1,
            crate::rhs::DelayHorizon::Fixed(1.0),
            Arc::new(|_phi: &dyn History| Ok(vec![2.5])),
        );
        let phi = HistoryFunction::constant(&[0.0]);
        let xi = prolong_const(&phi, 1.0).unwrap();
        let psi = substitute(&f, &xi).unwrap();
        assert!(psi.values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn substitute_zero_lag_exponential() {
        let f = linear_ode(1.0);
        let base = HistoryFunction::from_fn(1, 1.0, 1e-3, |s| vec![s.exp()]);
        let nodes = grid(1.0, 1000);
        let values: Vec<f64> = nodes.iter().map(|t| t.exp()).collect();
        let xi = Trajectory::new(base, nodes.clone(), values, None).unwrap();
        let psi = substitute(&f, &xi).unwrap();
        for (i, &t) in nodes.iter().enumerate() {
            assert!((psi.value_at(i)[0] - t.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn substitute_delayed_constant_history() {
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let xi = prolong_const(&phi, 1.0).unwrap();
        let psi = substitute(&f, &xi).unwrap();
        assert!(psi.values().iter().all(|&v| (v + 1.0).abs() < 1e-15));
    }

    #[test]
    fn integrate_path_examples() {
        let rule = QuadratureRule::trapezoid(10);
        let nodes = grid(1.0, 10);
        let zero = ForwardPath::new(1, nodes.clone(), vec![0.0; 11], false).unwrap();
        assert_eq!(integrate_path(&zero, &rule).unwrap().sup_norm(), 0.0);

        let one = ForwardPath::new(1, nodes.clone(), vec![1.0; 11], false).unwrap();
        let cum = integrate_path(&one, &rule).unwrap();
        for (i, &t) in nodes.iter().enumerate() {
            assert!((cum.value_at(i)[0] - t).abs() < 1e-14);
        }

        // psi(t) = t: exact under Simpson, O(h^2) under trapezoid
        let lin_vals: Vec<f64> = nodes.clone();
        let lin = ForwardPath::new(1, nodes.clone(), lin_vals, false).unwrap();
        let simpson = QuadratureRule::simpson(10).unwrap();
        let cum_s = integrate_path(&lin, &simpson).unwrap();
        for (i, &t) in nodes.iter().enumerate() {
            assert!((cum_s.value_at(i)[0] - 0.5 * t * t).abs() < 1e-15);
        }
    }

    #[test]
    fn picard_iterates_of_exponential() {
        // x' = x from phi == 1: iterates of B are the Taylor partial sums
        // of e^t - 1.
        let f = linear_ode(1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let rule = QuadratureRule::simpson(100).unwrap();
        let nodes = grid(0.5, 50);
        let eta0 = ForwardPath::zeros(1, nodes.clone());
        let b1 = picard_map(&f, &eta0, &phi, &rule).unwrap();
        for (i, &t) in nodes.iter().enumerate() {
            assert!((b1.value_at(i)[0] - t).abs() < 1e-10);
        }
        let b2 = picard_map(&f, &b1, &phi, &rule).unwrap();
        for (i, &t) in nodes.iter().enumerate() {
            assert!((b2.value_at(i)[0] - (t + 0.5 * t * t)).abs() < 1e-10);
        }
        let b3 = picard_map(&f, &b2, &phi, &rule).unwrap();
        for (i, &t) in nodes.iter().enumerate() {
            let expect = t + t * t / 2.0 + t * t * t / 6.0;
            assert!((b3.value_at(i)[0] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_rhs_maps_every_increment_to_the_same_ramp() {
        let f = RhsAutonomous::new(
            1,
            crate::rhs::DelayHorizon::Fixed(1.0),
            Arc::new(|_phi: &dyn History| Ok(vec![0.7])),
        );
        let phi = HistoryFunction::constant(&[2.0]);
        let rule = QuadratureRule::trapezoid(10);
        let nodes = grid(1.0, 10);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..3 {
            let eta = random_increment(1, &nodes, 0.5, &mut rng);
            let b = picard_map(&f, &eta, &phi, &rule).unwrap();
            for (i, &t) in nodes.iter().enumerate() {
                assert!((b.value_at(i)[0] - 0.7 * t).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn picard_map_of_delayed_rhs_is_linear_ramp() {
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let rule = QuadratureRule::trapezoid(100);
        let nodes = grid(1.0, 100);
        let eta0 = ForwardPath::zeros(1, nodes.clone());
        let b = picard_map(&f, &eta0, &phi, &rule).unwrap();
        for (i, &t) in nodes.iter().enumerate() {
            assert!((b.value_at(i)[0] + t).abs() < 1e-13);
        }
    }

    #[test]
    fn plan_respects_contraction_rule() {
        let cfg = SolverConfig::default();
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let plan = plan_step(&f, &phi, &cfg).unwrap();
        assert!(plan.step() <= 0.5);
        assert!(plan.contraction_bound <= 0.5 + 1e-12);
        // probing a unit-Lipschitz map finds roughly 1, doubled for safety
        assert!(plan.lipschitz_est >= 1.0 && plan.lipschitz_est <= 4.0);
    }

    #[test]
    fn plan_for_constant_rhs_takes_the_initial_guess() {
        let cfg = SolverConfig::default();
        let f = RhsAutonomous::new(
            1,
            crate::rhs::DelayHorizon::Fixed(1.0),
            Arc::new(|_phi: &dyn History| Ok(vec![0.3])),
        );
        let phi = HistoryFunction::constant(&[0.0]);
        let plan = plan_step(&f, &phi, &cfg).unwrap();
        assert_eq!(plan.lipschitz_est, 0.0);
        assert_eq!(plan.contraction_bound, 0.0);
        assert!(plan.step() <= 1.0);
        // the eps/8 smallness test caps S: |B_S(0)| = 0.3 S < eps/8
        assert!(0.3 * plan.step() < plan.eps / 8.0);
    }

    #[test]
    fn plan_for_quadratic_at_large_state() {
        let cfg = SolverConfig::default();
        let f = quadratic();
        let phi = HistoryFunction::constant(&[10.0]);
        let plan = plan_step(&f, &phi, &cfg).unwrap();
        // |Df| near phi is about 2*10 = 20, so S <= 1/40
        assert!(plan.step() <= 1.0 / 40.0 + 1e-9);
        assert!(plan.lipschitz_est >= 20.0);
    }

    #[test]
    fn solve_local_constant_delay_first_interval() {
        let cfg = SolverConfig::default();
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let plan = plan_step(&f, &phi, &cfg).unwrap();
        let (x, report) = solve_local(&f, &phi, &plan, &cfg).unwrap();
        // x(t) = 1 - t while the delayed argument stays in the history
        for (i, &t) in x.fwd_nodes().iter().enumerate() {
            assert!((x.fwd_value_at(i)[0] - (1.0 - t)).abs() < 1e-12);
        }
        assert!(report.residual <= cfg.tol.threshold(1.0));
        for r in report.ratios.iter().skip(1) {
            assert!(*r <= plan.contraction_bound + 0.1);
        }
    }

    #[test]
    fn solve_local_trivial_rhs_converges_fast() {
        let cfg = SolverConfig::default();
        let f = RhsAutonomous::new(
            1,
            crate::rhs::DelayHorizon::Fixed(1.0),
            Arc::new(|_phi: &dyn History| Ok(vec![0.0])),
        );
        let phi = HistoryFunction::constant(&[4.0]);
        let plan = plan_step(&f, &phi, &cfg).unwrap();
        let (x, report) = solve_local(&f, &phi, &plan, &cfg).unwrap();
        assert!(report.iterations <= 2);
        for i in 0..x.fwd_nodes().len() {
            assert_eq!(x.fwd_value_at(i)[0], 4.0);
        }
    }

    #[test]
    fn solve_local_exponential_with_simpson() {
        let mut cfg = SolverConfig::default();
        cfg.quadrature = QuadratureKind::Simpson;
        let f = linear_ode(1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let plan = plan_from_parts(0.5, cfg.grid_step, 2.0, 1.0);
        let (x, _) = solve_local(&f, &phi, &plan, &cfg).unwrap();
        let hz = x.horizon();
        assert!((hz - 0.5).abs() < 1e-12);
        assert!((x.eval(hz)[0] - hz.exp()).abs() < 1e-8);
    }

    #[test]
    fn smallness_decreases_with_step() {
        // |B_S(0, phi)| -> 0 monotonically as S halves.
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let rule = QuadratureRule::trapezoid(1000);
        let mut s = 1.0;
        let mut prev = f64::INFINITY;
        for _ in 0..4 {
            let nodes = grid(s, 64);
            let b0 = picard_map(&f, &ForwardPath::zeros(1, nodes), &phi, &rule).unwrap();
            let norm = b0.sup_norm();
            assert!(norm < prev);
            prev = norm;
            s /= 2.0;
        }
    }

    #[test]
    fn fixed_point_consistency_of_the_returned_segment() {
        // max over nodes of |x(t) - phi(0) - int_0^t f(x_s) ds| <= 2 atol
        let cfg = SolverConfig::default();
        let f = linear_ode(1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let plan = plan_step(&f, &phi, &cfg).unwrap();
        let (x, _) = solve_local(&f, &phi, &plan, &cfg).unwrap();
        let rule = cfg.quadrature_rule();
        let psi = substitute(&f, &x).unwrap();
        let integral = integrate_path(&psi, &rule).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..x.fwd_nodes().len() {
            let defect = (x.fwd_value_at(i)[0] - 1.0 - integral.value_at(i)[0]).abs();
            worst = worst.max(defect);
        }
        assert!(worst <= 2.0 * cfg.tol.atol, "fixed-point defect {worst:.3e}");
    }

    #[test]
    fn measured_contraction_within_bound() {
        let cfg = SolverConfig::default();
        let f = linear_const_delay(-1.0, 1.0);
        let phi = HistoryFunction::constant(&[1.0]);
        let plan = plan_step(&f, &phi, &cfg).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        let worst = measure_contraction(&f, &phi, &plan, &cfg, 20, &mut rng).unwrap();
        assert!(worst <= plan.contraction_bound + 0.1, "measured {worst}");
    }

    #[test]
    fn report_serializes_to_expected_shape() {
        let report = PicardReport { iterations: 3, residual: 1.5e-11, ratios: vec![0.5, 0.25] };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.starts_with("{\"iterations\":3,\"residual\":"));
        assert!(json.contains("\"ratios\":[0.5,0.25]"));
    }
}
