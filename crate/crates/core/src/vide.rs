//! Volterra integro-differential equations `x'(t) = int_0^t k(t,s) h(x(s)) ds`.
//!
//! Substituting `s -> t + s` turns the memory integral into a functional
//! of the segment: with the shifted kernel `K(t,s) = k(t, t+s)` and the
//! odd prolongation supplying values at positive arguments,
//! `g(t, phi) = int_{-t}^0 K(t,s) h((P_o phi)(s)) ds` is defined on all of
//! `R x C` and solutions of the VIDE solve `x' = g(t, x_t)`. The equation
//! then runs through the clock-augmented process with a delay horizon that
//! grows like the elapsed time. An independent product-trapezoid marcher
//! serves as the second route for verification.

use std::sync::Arc;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::history::{odd_prolong_into, ForwardPath, History, HistoryFunction};
use crate::numerics::QuadratureRule;
use crate::process::{process_run, ProcessRun};
use crate::rhs::{DelayHorizon, DirDerivTFn, EvalTFn, RhsNonautonomous};

type KernelFn = Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;
type PointFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A VIDE instance: kernel `k`, nonlinearity `h`, optional derivatives,
/// and the initial value `x(0)`.
#[derive(Clone)]
pub struct VideProblem {
    dim: usize,
    kernel: KernelFn,
    kernel_dt: Option<KernelFn>,
    h_fn: PointFn,
    h_jac: Option<PointFn>,
    x0: Vec<f64>,
}

impl VideProblem {
    /// General `n`-dimensional problem; `kernel` writes the `n x n` matrix
    /// `k(t, s)` row-major, `h` maps points of `R^n`.
    pub fn new(dim: usize, kernel: KernelFn, h: PointFn, x0: Vec<f64>) -> Self {
        assert!(dim > 0 && x0.len() == dim);
        Self { dim, kernel, kernel_dt: None, h_fn: h, h_jac: None, x0 }
    }

    /// Scalar convenience constructor.
    pub fn scalar(
        kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        x0: f64,
    ) -> Self {
        Self::new(
            1,
            Arc::new(move |t, s, out| out[0] = kernel(t, s)),
            Arc::new(move |x, out| out[0] = h(x[0])),
            vec![x0],
        )
    }

    /// Attaches the Jacobian of `h` (row-major `n x n`).
    pub fn with_h_jacobian(mut self, jac: PointFn) -> Self {
        self.h_jac = Some(jac);
        self
    }

    pub fn with_scalar_h_jacobian(
        self,
        dh: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        assert_eq!(self.dim, 1);
        self.with_h_jacobian(Arc::new(move |x, out| out[0] = dh(x[0])))
    }

    /// Attaches `d k / d t` for callers that want it; the solver itself
    /// differentiates the memory integral numerically where needed.
    pub fn with_kernel_dt(mut self, kdt: KernelFn) -> Self {
        self.kernel_dt = Some(kdt);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initial(&self) -> &[f64] {
        &self.x0
    }

    pub fn eval_h(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.h_fn)(x, &mut out);
        out
    }

    pub fn eval_kernel(&self, t: f64, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        (self.kernel)(t, s, &mut out);
        out
    }
}

/// The shifted kernel `K(t, s) = k(t, t + s)`.
pub fn shifted_kernel(p: &VideProblem, t: f64, s: f64) -> Vec<f64> {
    p.eval_kernel(t, t + s)
}

/// Pointwise substitution `h` along a sampled path.
pub fn substitute_h(p: &VideProblem, values: &[f64]) -> Vec<f64> {
    let dim = p.dim;
    let n = values.len() / dim;
    let mut out = vec![0.0; values.len()];
    for i in 0..n {
        (p.h_fn)(&values[i * dim..(i + 1) * dim], &mut out[i * dim..(i + 1) * dim]);
    }
    out
}

/// Directional derivative of the substitution operator:
/// `t -> Dh(psi(t)) chi(t)` pointwise. Requires the Jacobian.
pub fn substitute_h_deriv(p: &VideProblem, psi: &[f64], chi: &[f64]) -> Result<Vec<f64>> {
    let jac = p
        .h_jac
        .as_ref()
        .ok_or_else(|| Error::Invariant("substitution derivative needs the h Jacobian".into()))?;
    let dim = p.dim;
    let n = psi.len() / dim;
    let mut out = vec![0.0; psi.len()];
    let mut j = vec![0.0; dim * dim];
    for i in 0..n {
        jac(&psi[i * dim..(i + 1) * dim], &mut j);
        for r in 0..dim {
            let mut acc = 0.0;
            for c in 0..dim {
                acc += j[r * dim + c] * chi[i * dim + c];
            }
            out[i * dim + r] = acc;
        }
    }
    Ok(out)
}

fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for r in 0..n {
        let mut acc = 0.0;
        for c in 0..n {
            acc += m[r * n + c] * v[c];
        }
        out[r] = acc;
    }
}

/// The induced nonautonomous right-hand side
/// `g(t, phi) = int_{-t}^0 K(t,s) h((P_o phi)(s)) ds`, a signed integral:
/// for `t >= 0` only actual history is read; for `t < 0` the odd
/// prolongation supplies values at positive arguments and the orientation
/// flips the sign.
pub fn vide_g(p: &VideProblem, rule: &QuadratureRule, t: f64, phi: &dyn History) -> Vec<f64> {
    let n = p.dim;
    let mut x = vec![0.0; n];
    let mut hx = vec![0.0; n];
    let mut k = vec![0.0; n * n];
    rule.integrate_oriented(-t, 0.0, n, |s, out| {
        odd_prolong_into(phi, s, &mut x);
        (p.h_fn)(&x, &mut hx);
        (p.kernel)(t, t + s, &mut k);
        matvec(&k, &hx, out);
    })
}

/// Directional derivative of `vide_g` in the state, available when the
/// Jacobian of `h` is present:
/// `int_{-t}^0 K(t,s) Dh((P_o phi)(s)) (P_o chi)(s) ds`.
pub fn vide_g_state_deriv(
    p: &VideProblem,
    rule: &QuadratureRule,
    t: f64,
    phi: &dyn History,
    chi: &dyn History,
) -> Result<Vec<f64>> {
    let jac = p
        .h_jac
        .as_ref()
        .ok_or_else(|| Error::Invariant("state derivative needs the h Jacobian".into()))?;
    let n = p.dim;
    let mut x = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut j = vec![0.0; n * n];
    let mut jc = vec![0.0; n];
    let mut k = vec![0.0; n * n];
    Ok(rule.integrate_oriented(-t, 0.0, n, |s, out| {
        odd_prolong_into(phi, s, &mut x);
        odd_prolong_into(chi, s, &mut c);
        jac(&x, &mut j);
        matvec(&j, &c, &mut jc);
        (p.kernel)(t, t + s, &mut k);
        matvec(&k, &jc, out);
    }))
}

/// Wraps the problem as a nonautonomous descriptor with delay horizon
/// growing like the elapsed time, ready for the process machinery.
pub fn as_rhs(p: &Arc<VideProblem>, rule: QuadratureRule) -> RhsNonautonomous {
    let pe = Arc::clone(p);
    let eval: EvalTFn = Arc::new(move |t, phi| Ok(vide_g(&pe, &rule, t, phi)));
    let mut rhs = RhsNonautonomous::new(p.dim(), DelayHorizon::Growing { base: 0.0 }, eval);
    if p.h_jac.is_some() {
        let pd = Arc::clone(p);
        let deriv: DirDerivTFn =
            Arc::new(move |t, phi, chi| vide_g_state_deriv(&pd, &rule, t, phi, chi));
        rhs = rhs.with_state_deriv(deriv);
    }
    rhs
}

/// Solves the VIDE on `[0, T]` through the process route, from the
/// constant initial history at `x(0)` (the equation reads nothing before
/// time `0`, so any continuous history with the right head gives the same
/// solution).
pub fn solve_vide(p: &Arc<VideProblem>, horizon: f64, cfg: &SolverConfig) -> Result<ProcessRun> {
    if !(horizon > 0.0) {
        return Err(Error::OutOfRange { arg: horizon, lo: 0.0, hi: f64::INFINITY });
    }
    let g = Arc::new(as_rhs(p, cfg.quadrature_rule()));
    let phi = HistoryFunction::constant(p.initial());
    process_run(&g, horizon, 0.0, &phi, cfg)
}

/// Direct product-trapezoid marcher for the VIDE: one predictor-corrector
/// sweep per step, second order on smooth problems. The independent oracle
/// for the process route.
pub fn volterra_direct(p: &VideProblem, horizon: f64, dt: f64) -> Result<ForwardPath> {
    if !(horizon > 0.0 && dt > 0.0) {
        return Err(Error::Invariant("horizon and dt must be positive".into()));
    }
    let n = p.dim;
    let m = (horizon / dt).round().max(1.0) as usize;
    let nodes: Vec<f64> = (0..=m).map(|i| if i == m { horizon } else { i as f64 * dt }).collect();
    let mut x = vec![0.0; (m + 1) * n];
    x[..n].copy_from_slice(&p.x0);
    // h(x_j) cache, extended as the march proceeds
    let mut hx = vec![0.0; (m + 1) * n];
    let mut buf = vec![0.0; n];
    (p.h_fn)(&p.x0, &mut buf);
    hx[..n].copy_from_slice(&buf);

    let mut k = vec![0.0; n * n];
    let mut kv = vec![0.0; n];
    // memory integral at time t_i using samples 0..=upto
    let mut memory = |t_i: f64, upto: usize, hx: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        if upto == 0 {
            return;
        }
        for j in 0..=upto {
            (p.kernel)(t_i, nodes[j], &mut k);
            matvec(&k, &hx[j * n..(j + 1) * n], &mut kv);
            let w = if j == 0 || j == upto { 0.5 } else { 1.0 };
            for r in 0..n {
                out[r] += w * dt * kv[r];
            }
        }
    };

    let mut phi_m = vec![0.0; n];
    let mut phi_next = vec![0.0; n];
    for i in 0..m {
        memory(nodes[i], i, &hx, &mut phi_m);
        // predictor
        for r in 0..n {
            buf[r] = x[i * n + r] + dt * phi_m[r];
        }
        let mut hpred = vec![0.0; n];
        (p.h_fn)(&buf, &mut hpred);
        hx[(i + 1) * n..(i + 2) * n].copy_from_slice(&hpred);
        // corrector: trapezoid in the outer integral with the predicted
        // endpoint inside the memory term
        memory(nodes[i + 1], i + 1, &hx, &mut phi_next);
        for r in 0..n {
            x[(i + 1) * n + r] = x[i * n + r] + 0.5 * dt * (phi_m[r] + phi_next[r]);
        }
        (p.h_fn)(&x[(i + 1) * n..(i + 2) * n], &mut buf);
        hx[(i + 1) * n..(i + 2) * n].copy_from_slice(&buf);
    }
    ForwardPath::new(n, nodes, x, false)
}

// ---------------------------------------------------------------------------
// Shipped problems
// ---------------------------------------------------------------------------

/// `k == 1`, `h = id`, `x(0) = 1`: differentiating once gives `x'' = x`
/// with `x'(0) = 0`, so `x = cosh`.
pub fn vide_cosh() -> VideProblem {
    VideProblem::scalar(|_t, _s| 1.0, |x| x, 1.0).with_scalar_h_jacobian(|_x| 1.0)
}

/// `k == -1`, `h = id`, `x(0) = 1`: `x'' = -x`, `x'(0) = 0`, so `x = cos`.
pub fn vide_cos() -> VideProblem {
    VideProblem::scalar(|_t, _s| -1.0, |x| x, 1.0).with_scalar_h_jacobian(|_x| 1.0)
}

/// `k == 1`, `h = sin`, `x(0) = 1`: a nonlinear case without closed form,
/// checked by route equivalence.
pub fn vide_sin() -> VideProblem {
    VideProblem::scalar(|_t, _s| 1.0, |x| x.sin(), 1.0).with_scalar_h_jacobian(|x| x.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::TailPolicy;
    use crate::numerics::{fd_default_step, QuadratureKind};

    fn rule(dt: f64) -> QuadratureRule {
        QuadratureRule::new(QuadratureKind::Trapezoid, (1.0 / dt).round() as u32).unwrap()
    }

    #[test]
    fn shifted_kernel_examples() {
        let one = VideProblem::scalar(|_t, _s| 1.0, |x| x, 1.0);
        assert_eq!(shifted_kernel(&one, 3.0, -1.5), vec![1.0]);
        let exp = VideProblem::scalar(|t, s| (t - s).exp(), |x| x, 1.0);
        // K(t, s) = e^{-s}
        assert!((shifted_kernel(&exp, 2.0, -0.7)[0] - 0.7_f64.exp()).abs() < 1e-14);
        let prod = VideProblem::scalar(|t, s| t * s, |x| x, 1.0);
        assert_eq!(shifted_kernel(&prod, 2.0, -0.5)[0], 3.0);
    }

    #[test]
    fn substitution_operator_and_derivative() {
        let p = VideProblem::scalar(|_t, _s| 1.0, |x| x * x, 1.0).with_scalar_h_jacobian(|x| 2.0 * x);
        // identity case
        let id = VideProblem::scalar(|_t, _s| 1.0, |x| x, 1.0);
        let vals = vec![0.0, 0.5, 1.0];
        assert_eq!(substitute_h(&id, &vals), vals);
        // h(x) = x^2 on psi(t) = t with direction chi == 1: derivative 2t
        let out = substitute_h(&p, &vals);
        assert_eq!(out, vec![0.0, 0.25, 1.0]);
        let d = substitute_h_deriv(&p, &vals, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d, vec![0.0, 1.0, 2.0]);
        // against the finite-difference quotient
        let h = fd_default_step(1.0);
        for (i, &v) in vals.iter().enumerate() {
            let plus = (v + h) * (v + h);
            let minus = (v - h) * (v - h);
            let fd = (plus - minus) / (2.0 * h);
            assert!((d[i] - fd).abs() < 1e-8);
        }
        // constant path
        let c = substitute_h(&p, &[3.0, 3.0]);
        assert_eq!(c, vec![9.0, 9.0]);
    }

    #[test]
    fn vide_g_closed_forms() {
        let id = VideProblem::scalar(|_t, _s| 1.0, |x| x, 1.0);
        let r = rule(1e-3);
        let one = HistoryFunction::constant(&[1.0]);
        // int_{-2}^0 1 ds = 2
        assert!((vide_g(&id, &r, 2.0, &one)[0] - 2.0).abs() < 1e-12);
        // empty interval
        assert_eq!(vide_g(&id, &r, 0.0, &one), vec![0.0]);
        // phi(s) = s: int_{-1}^0 s ds = -1/2 (trapezoid exact on linear)
        let lin = HistoryFunction::from_fn(1, 2.0, 1e-3, |s| vec![s]);
        assert!((vide_g(&id, &r, 1.0, &lin)[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn vide_g_ignores_unread_past() {
        // For t >= 0 the integrand never reads below -t.
        let id = VideProblem::scalar(|_t, _s| 1.0, |x| x, 1.0);
        let r = rule(1e-2);
        let mk = |deep: f64| {
            HistoryFunction::from_samples(
                1,
                vec![-3.0, -1.0, 0.0],
                vec![deep, 2.0, 1.0],
                None,
                TailPolicy::ConstantExtension,
            )
            .unwrap()
        };
        let a = vide_g(&id, &r, 1.0, &mk(50.0));
        let b = vide_g(&id, &r, 1.0, &mk(-7.0));
        assert_eq!(a, b);
    }

    #[test]
    fn vide_g_negative_time_oddness() {
        // For t < 0 the integral runs with flipped orientation over odd-
        // prolonged data; quadrature of the prolonged integrand reproduces it.
        let id = VideProblem::scalar(|_t, _s| 1.0, |x| x, 1.0);
        let r = rule(1e-3);
        let phi = HistoryFunction::from_fn(1, 3.0, 1e-3, |s| vec![s + 0.25 * s * s]);
        for &t in &[-0.5, -1.0, -1.7] {
            let got = vide_g(&id, &r, t, &phi)[0];
            let expect = r.integrate_oriented(-t, 0.0, 1, |s, out| {
                crate::history::odd_prolong_into(&phi, s, out);
            })[0];
            assert!((got - expect).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn memory_integral_derivative_boundary_term() {
        // d/du of (I psi)(u) = int_{-u}^0 K(u,s) psi(s) ds. The moving
        // lower limit -u contributes +K(u,-u) psi(-u); a tempting sign slip
        // yields -K(u,u) psi(u) instead. For k(t,s) = s (so K(u,s) = u + s)
        // and psi = exp the candidates differ by 2u e^u, and finite
        // differences decide.
        let p = VideProblem::scalar(|_t, s| s, |x| x, 1.0);
        let r = rule(1e-4);
        let psi = HistoryFunction::from_fn(1, 3.0, 1e-4, |s| vec![s.exp()]);
        let iop = |u: f64| vide_g(&p, &r, u, &psi)[0];
        let u = 1.0;
        let h = 1e-5;
        let fd = (iop(u + h) - iop(u - h)) / (2.0 * h);
        // correct derivative: K(u,-u) psi(-u) + int_{-u}^0 d/du K(u,s) psi(s) ds
        // with K(u,s) = u + s: boundary 0, integrand derivative 1.
        let correct = 0.0
            + r.integrate_oriented(-u, 0.0, 1, |s, out| {
                out[0] = psi.eval(s)[0];
            })[0];
        let wrong_sign_variant = -2.0 * u * u.exp() + correct;
        // The finite difference carries grid-snapping noise of about 1e-5;
        // the two candidate formulas differ by about 5.4, so it still
        // separates them decisively.
        assert!((fd - correct).abs() < 1e-3, "fd {fd} vs {correct}");
        assert!((fd - wrong_sign_variant).abs() > 1.0, "boundary term sign matters");
    }

    #[test]
    fn direct_marcher_reproduces_cosh_and_cos() {
        let dt = 1e-3;
        let cosh = volterra_direct(&vide_cosh(), 2.0, dt).unwrap();
        let mut worst = 0.0_f64;
        for (i, &t) in cosh.nodes().iter().enumerate() {
            worst = worst.max((cosh.value_at(i)[0] - t.cosh()).abs());
        }
        assert!(worst < 1e-5, "cosh error {worst}");

        let cos = volterra_direct(&vide_cos(), std::f64::consts::PI, dt).unwrap();
        let end = cos.value_at(cos.nodes().len() - 1)[0];
        assert!((end + 1.0).abs() < 1e-5, "cos(pi) = {end}");
    }

    #[test]
    fn direct_marcher_is_second_order() {
        let errs: Vec<f64> = [2e-3, 1e-3, 5e-4]
            .iter()
            .map(|&dt| {
                let path = volterra_direct(&vide_cosh(), 2.0, dt).unwrap();
                path.nodes()
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| (path.value_at(i)[0] - t.cosh()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn initial_history_below_zero_is_never_read() {
        // The memory integral reads nothing before time 0, so any
        // continuous history with the right head solves the same problem.
        use crate::config::SolverConfig;
        use crate::process::project_trajectory;
        use crate::rhs::RhsNonautonomous;
        let p = Arc::new(vide_cosh());
        let cfg = SolverConfig::default().with_grid_step(1e-2);
        let g: Arc<RhsNonautonomous> = Arc::new(as_rhs(&p, cfg.quadrature_rule()));
        let solve_from = |phi: &HistoryFunction| {
            let pr = crate::process::process_run(&g, 1.0, 0.0, phi, &cfg).unwrap();
            assert!(pr.run.reached_horizon());
            project_trajectory(&pr.run.trajectory)
        };
        let quiet = solve_from(&HistoryFunction::constant(&[1.0]));
        let wild = solve_from(&HistoryFunction::from_fn(1, 2.0, 1e-2, |s| {
            vec![1.0 + s * (8.0 * s).sin()]
        }));
        let mut worst = 0.0_f64;
        for (i, &t) in quiet.fwd_nodes().iter().enumerate() {
            worst = worst.max((quiet.fwd_value_at(i)[0] - wild.eval(t)[0]).abs());
        }
        // the window scale feeds the step planner, so the schedules (and
        // with them the Picard truncation) differ slightly; the values must
        // agree far below the discretization error all the same
        assert!(worst <= 1e-7, "history leaked into the solution: {worst:.3e}");
    }

    #[test]
    fn route_equivalence_with_second_order_constant() {
        // |solve_vide - volterra_direct| <= C dt^2 with C stable under grid
        // halving, on the cos and nonlinear sin problems.
        use crate::config::SolverConfig;
        use crate::process::project_trajectory;
        for problem in [vide_cos(), vide_sin()] {
            let p = Arc::new(problem);
            let mut c_max: f64 = 0.0;
            let mut c_prev: Option<f64> = None;
            for dt in [4e-3, 2e-3] {
                let cfg = SolverConfig::default().with_grid_step(dt);
                let pr = solve_vide(&p, 2.0, &cfg).unwrap();
                assert!(pr.run.reached_horizon());
                let x = project_trajectory(&pr.run.trajectory);
                let direct = volterra_direct(&p, 2.0, dt).unwrap();
                let mut diff = 0.0_f64;
                for (i, &t) in direct.nodes().iter().enumerate() {
                    diff = diff.max((direct.value_at(i)[0] - x.eval(t)[0]).abs());
                }
                let c = diff / (dt * dt);
                // the constant must not grow as the grid refines
                if let Some(prev) = c_prev {
                    assert!(c <= prev.max(1e-3) * 2.0, "C grew: {prev:.3e} -> {c:.3e}");
                }
                c_prev = Some(c);
                c_max = c_max.max(c);
            }
            assert!(c_max.is_finite());
        }
    }

    #[test]
    fn trivial_nonlinearity_keeps_the_state() {
        let p = VideProblem::scalar(|_t, _s| 1.0, |_x| 0.0, 1.0);
        let path = volterra_direct(&p, 1.0, 1e-2).unwrap();
        assert!(path.values().iter().all(|&v| v == 1.0));
    }
}
