//! Error type shared by all solver modules.

/// Errors produced while constructing histories, evaluating right-hand
/// sides, or stepping a solution.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// An evaluation argument lies outside the domain of the function.
    #[error("argument {arg} outside domain [{lo}, {hi}]")]
    OutOfRange { arg: f64, lo: f64, hi: f64 },

    /// A structural invariant of a history / trajectory / path was violated.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Quadrature samples do not line up with the rule's panel structure.
    #[error("quadrature alignment: {0}")]
    Misaligned(String),

    /// The state left the domain of the right-hand side at time `t`.
    #[error("state left the right-hand side domain at t = {t}")]
    DomainExit { t: f64 },

    /// No admissible step length could be found: the contraction and
    /// smallness tests kept failing down to the minimum step. This is the
    /// usual signature of blow-up or extreme stiffness.
    #[error("step selection failed: required step {step:.3e} below minimum {min:.3e} (probable blow-up or stiffness)")]
    StepSelection { step: f64, min: f64 },

    /// The Picard iteration did not reach the residual tolerance.
    #[error("no convergence after {iterations} sweeps, residual {residual:.3e}")]
    Nonconvergence { iterations: usize, residual: f64 },

    /// A computed trajectory is shorter than the requested horizon.
    #[error("requested time {requested} beyond computed horizon {reached}")]
    Horizon { requested: f64, reached: f64 },

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Malformed CSV input.
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;
