//! Delay differential equations with unbounded delay.
//!
//! This crate solves `x'(t) = f(x_t)` for functionals on the history space
//! `C((-inf, 0], R^n)` by constructive fixed-point iteration: each step is
//! sized so the Picard map is a certified contraction, local segments are
//! chained into a semiflow, and the same machinery yields
//!
//! - sensitivity solutions of the variational equation along a trajectory
//!   ([`variational`]),
//! - two-parameter processes for nonautonomous equations via clock
//!   augmentation ([`process`]),
//! - Volterra integro-differential equations `x' = int_0^t k(t,s) h(x(s)) ds`
//!   reduced through the odd prolongation ([`vide`]).
//!
//! Histories are sampled windows with explicit tail policies ([`history`]);
//! delays may exceed any bound, including the `d(t) = t` memory of the
//! integro-differential case.
//!
//! # Example
//!
//! ```
//! use ddeflow::prelude::*;
//!
//! // x'(t) = -x(t-1) from the constant history 1: the classic method of
//! // steps gives x(1) = 0 and x(2) = -1/2.
//! let f = linear_const_delay(-1.0, 1.0);
//! let phi = HistoryFunction::constant(&[1.0]);
//! let run = semiflow(&f, &phi, 2.0, &SolverConfig::default()).unwrap();
//! assert!(run.reached_horizon());
//! assert!((run.value_at(2.0).unwrap()[0] + 0.5).abs() < 1e-6);
//! ```

pub mod config;
pub mod error;
pub mod history;
pub mod numerics;
pub mod oracles;
pub mod picard;
pub mod process;
pub mod rhs;
pub mod semiflow;
pub mod variational;
pub mod vide;

pub use config::SolverConfig;
pub use error::{Error, Result};

/// The working vocabulary in one import.
pub mod prelude {
    pub use crate::config::SolverConfig;
    pub use crate::error::{Error, Result};
    pub use crate::history::{
        concat, materialize, odd_prolong, prolong_const, segment, seminorm, seminorm_diff,
        zero_extend, ForwardPath, History, HistoryFunction, SeminormIndex, TailPolicy, Trajectory,
    };
    pub use crate::numerics::{QuadratureKind, QuadratureRule, Tolerance};
    pub use crate::picard::{picard_map, plan_step, solve_local, PicardReport, StepPlan};
    pub use crate::process::{
        augment, check_cocycle, process, process_run, ClockHistory, ProcessRun,
    };
    pub use crate::rhs::{
        linear_const_delay, linear_ode, pantograph, quadratic, state_dep_delay, DelayHorizon,
        RhsAutonomous, RhsNonautonomous,
    };
    pub use crate::semiflow::{
        check_semigroup, check_uniqueness, contraction_certificate, semiflow, SemiflowRun,
        Termination,
    };
    pub use crate::variational::{
        distance_to_path, fd_solution_derivative, solve_variational, VariationalRun,
    };
    pub use crate::vide::{
        solve_vide, vide_cos, vide_cosh, vide_g, vide_sin, volterra_direct, VideProblem,
    };
}
