//! Solver configuration shared by the stepping modules.

use crate::error::{Error, Result};
use crate::numerics::{QuadratureKind, QuadratureRule, Tolerance};

/// Knobs for step planning and Picard iteration. The defaults match the
/// tolerances used throughout the verification suites.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Target grid spacing; accepted steps are snapped to multiples of it
    /// whenever they are at least this long.
    pub grid_step: f64,
    /// Quadrature used for the integration operator and the inner integrals
    /// of integro-differential right-hand sides.
    pub quadrature: QuadratureKind,
    /// Picard convergence tolerances.
    pub tol: Tolerance,
    /// Seed for the randomized probing directions (Lipschitz estimation)
    /// and the randomized property checks.
    pub seed: u64,
    /// Upper cap on any single step length.
    pub max_step: f64,
    /// Smallest admissible step; falling below it aborts with a
    /// step-selection failure.
    pub s_min: f64,
    /// Retries in the halving search for an admissible step.
    pub max_halvings: u32,
    /// Radius of the iterate ball as a multiple of `1 + |phi|_window`.
    pub ball_factor: f64,
    /// Random directions used when probing the local Lipschitz constant.
    pub probe_directions: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_step: 1e-3,
            quadrature: QuadratureKind::Trapezoid,
            tol: Tolerance::default(),
            seed: 42,
            max_step: 1.0,
            s_min: 2.0_f64.powi(-20),
            max_halvings: 20,
            ball_factor: 0.5,
            probe_directions: 6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0) || !(self.max_step > 0.0) || !(self.s_min > 0.0) {
            return Err(Error::Invariant("grid_step, max_step, s_min must be positive".into()));
        }
        if !(self.ball_factor > 0.0) || self.probe_directions == 0 {
            return Err(Error::Invariant("ball_factor and probe_directions must be positive".into()));
        }
        Ok(())
    }

    pub fn with_grid_step(mut self, dt: f64) -> Self {
        self.grid_step = dt;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_step(mut self, s: f64) -> Self {
        self.max_step = s;
        self
    }

    pub fn with_tol(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }

    /// Rule matching the configured kind, with panel density tied to the
    /// grid step (rounded to keep Simpson's parity requirement).
    pub fn quadrature_rule(&self) -> QuadratureRule {
        let mut ppu = (1.0 / self.grid_step).round().max(1.0) as u32;
        if self.quadrature == QuadratureKind::Simpson && ppu % 2 != 0 {
            ppu += 1;
        }
        QuadratureRule::new(self.quadrature, ppu).expect("valid by construction")
    }
}
