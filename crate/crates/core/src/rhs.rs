//! Right-hand-side descriptors.
//!
//! An autonomous equation `x'(t) = f(x_t)` is described by the functional
//! `f` together with its directional derivative (exact when available, a
//! central difference otherwise), the width of the history window it
//! actually reads, and a domain membership predicate. Nonautonomous
//! descriptors `x'(t) = g(t, x_t)` carry the same data per fixed `t`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::history::{materialize, History};
use crate::numerics::{fd_default_step, fd_directional, window_scale};

pub type EvalFn = Arc<dyn Fn(&dyn History) -> Result<Vec<f64>> + Send + Sync>;
pub type DirDerivFn = Arc<dyn Fn(&dyn History, &dyn History) -> Result<Vec<f64>> + Send + Sync>;
pub type DomainFn = Arc<dyn Fn(&dyn History) -> bool + Send + Sync>;
pub type EvalTFn = Arc<dyn Fn(f64, &dyn History) -> Result<Vec<f64>> + Send + Sync>;
pub type DirDerivTFn =
    Arc<dyn Fn(f64, &dyn History, &dyn History) -> Result<Vec<f64>> + Send + Sync>;
pub type DomainTFn = Arc<dyn Fn(f64, &dyn History) -> bool + Send + Sync>;

/// How far into the past a functional reads, as declared by its author.
#[derive(Clone, Copy, Debug)]
pub enum DelayHorizon {
    /// Reads only `[-d, 0]` near every reachable state.
    Fixed(f64),
    /// Reads `[-(base + elapsed), 0]` after `elapsed` time units; the
    /// regime of integro-differential equations whose delay grows with
    /// time.
    Growing { base: f64 },
}

impl DelayHorizon {
    /// Window depth required at the given elapsed solution time.
    pub fn depth_at(&self, elapsed: f64) -> f64 {
        match *self {
            DelayHorizon::Fixed(d) => d,
            DelayHorizon::Growing { base } => base + elapsed,
        }
    }

    /// A time-independent length scale, used to size initial step guesses.
    pub fn nominal(&self) -> f64 {
        match *self {
            DelayHorizon::Fixed(d) => d,
            DelayHorizon::Growing { .. } => 1.0,
        }
    }
}

/// Descriptor of an autonomous functional `f : U -> R^n` on the history
/// space.
#[derive(Clone)]
pub struct RhsAutonomous {
    dim: usize,
    delay: DelayHorizon,
    eval: EvalFn,
    dir_deriv: Option<DirDerivFn>,
    in_domain: Option<DomainFn>,
}

impl fmt::Debug for RhsAutonomous {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RhsAutonomous")
            .field("dim", &self.dim)
            .field("delay", &self.delay)
            .field("exact_deriv", &self.dir_deriv.is_some())
            .finish()
    }
}

impl RhsAutonomous {
    pub fn new(dim: usize, delay: DelayHorizon, eval: EvalFn) -> Self {
        Self { dim, delay, eval, dir_deriv: None, in_domain: None }
    }

    pub fn with_dir_deriv(mut self, d: DirDerivFn) -> Self {
        self.dir_deriv = Some(d);
        self
    }

    pub fn with_domain(mut self, p: DomainFn) -> Self {
        self.in_domain = Some(p);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delay(&self) -> DelayHorizon {
        self.delay
    }

    pub fn has_exact_deriv(&self) -> bool {
        self.dir_deriv.is_some()
    }

    /// Domain membership of `phi`; defaults to the whole space.
    pub fn in_domain(&self, phi: &dyn History) -> bool {
        self.in_domain.as_ref().is_none_or(|p| p(phi))
    }

    /// Evaluates `f(phi)`, checking domain membership and finiteness.
    pub fn eval_f(&self, phi: &dyn History) -> Result<Vec<f64>> {
        if !self.in_domain(phi) {
            return Err(Error::DomainExit { t: f64::NAN });
        }
        let out = (self.eval)(phi)?;
        debug_assert_eq!(out.len(), self.dim);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("right-hand side value".into()));
        }
        Ok(out)
    }

    /// Directional derivative `Df(phi)chi`: the exact closure when
    /// provided, a central difference otherwise. The fallback materializes
    /// both arguments over the declared read window, which is harmless for
    /// functionals of locally bounded delay.
    pub fn eval_df(&self, phi: &dyn History, chi: &dyn History) -> Result<Vec<f64>> {
        if !self.in_domain(phi) {
            return Err(Error::DomainExit { t: f64::NAN });
        }
        if let Some(d) = &self.dir_deriv {
            return d(phi, chi);
        }
        let depth = phi.window_hint().max(chi.window_hint()).max(self.delay.nominal());
        let phi_m = materialize(phi, depth);
        let chi_m = materialize(chi, depth);
        let chi_scale = window_scale(&chi_m);
        if chi_scale == 0.0 {
            return Ok(vec![0.0; self.dim]);
        }
        let h = fd_default_step(window_scale(&phi_m)) / chi_scale;
        fd_directional(|p| self.eval_f(p), &phi_m, &chi_m, h)
    }
}

/// Descriptor of a nonautonomous map `g : V subset R x C -> R^n`.
#[derive(Clone)]
pub struct RhsNonautonomous {
    dim: usize,
    delay: DelayHorizon,
    eval: EvalTFn,
    dir_deriv_state: Option<DirDerivTFn>,
    in_domain: Option<DomainTFn>,
}

impl fmt::Debug for RhsNonautonomous {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RhsNonautonomous")
            .field("dim", &self.dim)
            .field("delay", &self.delay)
            .field("exact_state_deriv", &self.dir_deriv_state.is_some())
            .finish()
    }
}

impl RhsNonautonomous {
    pub fn new(dim: usize, delay: DelayHorizon, eval: EvalTFn) -> Self {
        Self { dim, delay, eval, dir_deriv_state: None, in_domain: None }
    }

    pub fn with_state_deriv(mut self, d: DirDerivTFn) -> Self {
        self.dir_deriv_state = Some(d);
        self
    }

    pub fn with_domain(mut self, p: DomainTFn) -> Self {
        self.in_domain = Some(p);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delay(&self) -> DelayHorizon {
        self.delay
    }

    pub fn in_domain(&self, t: f64, phi: &dyn History) -> bool {
        self.in_domain.as_ref().is_none_or(|p| p(t, phi))
    }

    pub fn eval_g(&self, t: f64, phi: &dyn History) -> Result<Vec<f64>> {
        if !self.in_domain(t, phi) {
            return Err(Error::DomainExit { t });
        }
        let out = (self.eval)(t, phi)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("right-hand side value at t = {t}")));
        }
        Ok(out)
    }

    /// Partial directional derivative in the state argument, if declared.
    pub fn state_deriv(&self, t: f64, phi: &dyn History, chi: &dyn History) -> Option<Result<Vec<f64>>> {
        self.dir_deriv_state.as_ref().map(|d| d(t, phi, chi))
    }
}

// ---------------------------------------------------------------------------
// Built-in right-hand sides
// ---------------------------------------------------------------------------

/// `f(phi) = a * phi(-tau)`: the linear constant-delay equation
/// `x'(t) = a x(t - tau)`.
pub fn linear_const_delay(a: f64, tau: f64) -> RhsAutonomous {
    assert!(tau > 0.0, "delay must be positive");
    let eval: EvalFn = Arc::new(move |phi| Ok(phi.eval(-tau).iter().map(|v| a * v).collect()));
    let deriv: DirDerivFn =
        Arc::new(move |_phi, chi| Ok(chi.eval(-tau).iter().map(|v| a * v).collect()));
    RhsAutonomous::new(1, DelayHorizon::Fixed(tau), eval).with_dir_deriv(deriv)
}

/// `f(phi) = a * phi(0)`: the ordinary equation `x' = a x` seen as a
/// degenerate delay equation.
pub fn linear_ode(a: f64) -> RhsAutonomous {
    let eval: EvalFn = Arc::new(move |phi| Ok(phi.eval(0.0).iter().map(|v| a * v).collect()));
    let deriv: DirDerivFn =
        Arc::new(move |_phi, chi| Ok(chi.eval(0.0).iter().map(|v| a * v).collect()));
    RhsAutonomous::new(1, DelayHorizon::Fixed(1.0), eval).with_dir_deriv(deriv)
}

/// `f(phi) = phi(0)^2`: scalar quadratic growth, blowing up in finite time
/// from positive data.
pub fn quadratic() -> RhsAutonomous {
    let eval: EvalFn = Arc::new(|phi| {
        let v = phi.eval(0.0)[0];
        Ok(vec![v * v])
    });
    let deriv: DirDerivFn = Arc::new(|phi, chi| Ok(vec![2.0 * phi.eval(0.0)[0] * chi.eval(0.0)[0]]));
    RhsAutonomous::new(1, DelayHorizon::Fixed(1.0), eval).with_dir_deriv(deriv)
}

/// `f(phi) = a * phi(-phi(0)^2)`: state-dependent delay. The domain is
/// restricted to histories with `phi(0)^2 < d_max` so the read stays inside
/// the declared window.
pub fn state_dep_delay(a: f64, d_max: f64) -> RhsAutonomous {
    assert!(d_max > 0.0);
    let eval: EvalFn = Arc::new(move |phi| {
        let lag = phi.eval(0.0)[0].powi(2);
        Ok(phi.eval(-lag).iter().map(|v| a * v).collect())
    });
    let domain: DomainFn = Arc::new(move |phi| phi.eval(0.0)[0].powi(2) < d_max);
    RhsAutonomous::new(1, DelayHorizon::Fixed(d_max), eval).with_domain(domain)
}

/// The pantograph equation `x'(t) = a x(lambda t) + b x(t)`, `0 < lambda < 1`,
/// written nonautonomously as `g(t, phi) = a (P_o phi)((lambda - 1) t) + b phi(0)`
/// with the odd prolongation supplying values at positive arguments (which
/// occur for negative clock times).
pub fn pantograph(a: f64, b: f64, lambda: f64) -> RhsNonautonomous {
    assert!(lambda > 0.0 && lambda < 1.0, "pantograph needs 0 < lambda < 1");
    let eval: EvalTFn = Arc::new(move |t, phi| {
        let s = (lambda - 1.0) * t;
        let delayed = crate::history::odd_prolong(phi, s);
        let head = phi.eval(0.0);
        Ok(delayed.iter().zip(&head).map(|(d, h)| a * d + b * h).collect())
    });
    let deriv: DirDerivTFn = Arc::new(move |t, _phi, chi| {
        let s = (lambda - 1.0) * t;
        let delayed = crate::history::odd_prolong(chi, s);
        let head = chi.eval(0.0);
        Ok(delayed.iter().zip(&head).map(|(d, h)| a * d + b * h).collect())
    });
    RhsNonautonomous::new(1, DelayHorizon::Growing { base: 0.0 }, eval).with_state_deriv(deriv)
}
