//! Quadrature, tolerancing, and finite-difference utilities shared by the
//! solver modules.

use crate::error::{Error, Result};
use crate::history::{axpy_history, with_scratch, HistoryFunction};

/// Relative mismatch allowed between sample spacings before they count as
/// misaligned with the rule's panels.
const ALIGN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadratureKind {
    Trapezoid,
    Simpson,
}

/// A composite quadrature rule tied to a uniform grid with a fixed number
/// of panels per unit length.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureRule {
    kind: QuadratureKind,
    panels_per_unit: u32,
}

impl QuadratureRule {
    pub fn new(kind: QuadratureKind, panels_per_unit: u32) -> Result<Self> {
        if panels_per_unit == 0 {
            return Err(Error::Invariant("panel count must be >= 1".into()));
        }
        if kind == QuadratureKind::Simpson && panels_per_unit % 2 != 0 {
            return Err(Error::Invariant("Simpson requires an even panel count per unit".into()));
        }
        Ok(Self { kind, panels_per_unit })
    }

    pub fn trapezoid(panels_per_unit: u32) -> Self {
        Self::new(QuadratureKind::Trapezoid, panels_per_unit).unwrap()
    }

    pub fn simpson(panels_per_unit: u32) -> Result<Self> {
        Self::new(QuadratureKind::Simpson, panels_per_unit)
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn panels_per_unit(&self) -> u32 {
        self.panels_per_unit
    }

    /// Number of panels for an interval of length `len`, respecting the
    /// rule's density and parity requirements.
    pub fn panels_for(&self, len: f64) -> usize {
        let raw = (len * f64::from(self.panels_per_unit)).ceil() as usize;
        let mut n = raw.max(1);
        if self.kind == QuadratureKind::Simpson && n % 2 != 0 {
            n += 1;
        }
        n
    }

    fn check_alignment(&self, nodes: &[f64]) -> Result<f64> {
        if nodes.len() < 2 {
            return Err(Error::Misaligned("need at least two sample nodes".into()));
        }
        let h = nodes[1] - nodes[0];
        if !(h > 0.0) {
            return Err(Error::Misaligned("nodes must be ascending".into()));
        }
        for w in nodes.windows(2) {
            let d = w[1] - w[0];
            if (d - h).abs() > ALIGN_TOL * h {
                return Err(Error::Misaligned(format!(
                    "nonuniform spacing {d} vs {h} not aligned with panels"
                )));
            }
        }
        if self.kind == QuadratureKind::Simpson && (nodes.len() - 1) % 2 != 0 {
            return Err(Error::Misaligned("Simpson needs an even number of panels".into()));
        }
        Ok(h)
    }

    /// Integral of a sampled `R^dim`-valued function over its node range.
    /// Samples must be uniformly spaced (and even in count for Simpson).
    pub fn integrate(&self, nodes: &[f64], values: &[f64], dim: usize) -> Result<Vec<f64>> {
        if values.len() != nodes.len() * dim {
            return Err(Error::Misaligned("values length mismatch".into()));
        }
        if nodes.len() == 1 {
            return Ok(vec![0.0; dim]);
        }
        let h = self.check_alignment(nodes)?;
        let n = nodes.len() - 1;
        let mut out = vec![0.0; dim];
        match self.kind {
            QuadratureKind::Trapezoid => {
                for k in 0..dim {
                    let mut acc = 0.5 * (values[k] + values[n * dim + k]);
                    for i in 1..n {
                        acc += values[i * dim + k];
                    }
                    out[k] = acc * h;
                }
            }
            QuadratureKind::Simpson => {
                for k in 0..dim {
                    let mut acc = values[k] + values[n * dim + k];
                    for i in 1..n {
                        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                        acc += w * values[i * dim + k];
                    }
                    out[k] = acc * h / 3.0;
                }
            }
        }
        Ok(out)
    }

    /// Cumulative integral at every node, starting from `0`. Trapezoid
    /// accumulates panel by panel; Simpson integrates panel pairs with the
    /// standard three-point half-panel formula at odd nodes.
    pub fn cumulative(&self, h: f64, values: &[f64], dim: usize) -> Vec<f64> {
        let n_nodes = values.len() / dim;
        let mut out = vec![0.0; values.len()];
        if n_nodes < 2 {
            return out;
        }
        match self.kind {
            QuadratureKind::Trapezoid => {
                for i in 1..n_nodes {
                    for k in 0..dim {
                        out[i * dim + k] = out[(i - 1) * dim + k]
                            + 0.5 * h * (values[(i - 1) * dim + k] + values[i * dim + k]);
                    }
                }
            }
            QuadratureKind::Simpson => {
                let f = |i: usize, k: usize| values[i * dim + k];
                let mut i = 0;
                while i + 2 < n_nodes {
                    // Integral over the first half of the pair via the
                    // parabola through the three samples, then the full pair.
                    for k in 0..dim {
                        let a = out[i * dim + k];
                        out[(i + 1) * dim + k] =
                            a + h / 12.0 * (5.0 * f(i, k) + 8.0 * f(i + 1, k) - f(i + 2, k));
                        out[(i + 2) * dim + k] =
                            a + h / 3.0 * (f(i, k) + 4.0 * f(i + 1, k) + f(i + 2, k));
                    }
                    i += 2;
                }
                if i + 1 < n_nodes {
                    // Odd tail panel: mirror the half-panel formula using
                    // the previous node, or fall back to a trapezoid when
                    // only two samples exist at all.
                    for k in 0..dim {
                        out[(i + 1) * dim + k] = if i == 0 {
                            0.5 * h * (f(0, k) + f(1, k))
                        } else {
                            out[i * dim + k]
                                + h / 12.0 * (-f(i - 1, k) + 8.0 * f(i, k) + 5.0 * f(i + 1, k))
                        };
                    }
                }
            }
        }
        out
    }

    /// Signed integral of `f` over the oriented interval from `a` to `b`,
    /// evaluated on a fresh uniform grid sized by the rule. Reversing the
    /// orientation flips the sign; the integral over `[a, a]` is `0`.
    pub fn integrate_oriented(
        &self,
        a: f64,
        b: f64,
        dim: usize,
        mut f: impl FnMut(f64, &mut [f64]),
    ) -> Vec<f64> {
        if a == b {
            return vec![0.0; dim];
        }
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        let n = self.panels_for(hi - lo);
        let h = (hi - lo) / n as f64;
        let mut values = vec![0.0; (n + 1) * dim];
        for i in 0..=n {
            let t = if i == n { hi } else { lo + i as f64 * h };
            f(t, &mut values[i * dim..(i + 1) * dim]);
        }
        let nodes: Vec<f64> = (0..=n).map(|i| if i == n { hi } else { lo + i as f64 * h }).collect();
        let mut out = self.integrate(&nodes, &values, dim).expect("grid is aligned");
        for v in &mut out {
            *v *= sign;
        }
        out
    }
}

/// Convergence tolerances for fixed-point iterations.
#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
    pub max_iters: usize,
}

impl Tolerance {
    pub fn new(atol: f64, rtol: f64, max_iters: usize) -> Result<Self> {
        if !(atol > 0.0) {
            return Err(Error::Invariant("atol must be positive".into()));
        }
        if !(rtol >= 0.0) || max_iters == 0 {
            return Err(Error::Invariant("rtol must be >= 0 and max_iters >= 1".into()));
        }
        Ok(Self { atol, rtol, max_iters })
    }

    /// Residual threshold for an iterate of the given magnitude.
    pub fn threshold(&self, scale: f64) -> f64 {
        self.atol + self.rtol * scale
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { atol: 1e-10, rtol: 1e-10, max_iters: 60 }
    }
}

/// Central-difference step for a perturbation of size `scale`.
pub fn fd_default_step(scale: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + scale.abs())
}

/// Central difference `(F(phi + h*chi) - F(phi - h*chi)) / (2h)` of a map
/// from histories to `R^m`. Serves both as the fallback directional
/// derivative and as the oracle against exact derivatives.
pub fn fd_directional(
    f: impl Fn(&HistoryFunction) -> Result<Vec<f64>>,
    phi: &HistoryFunction,
    chi: &HistoryFunction,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Invariant("finite-difference step must be positive".into()));
    }
    let plus = f(&axpy_history(1.0, phi, h, chi)?)?;
    let minus = f(&axpy_history(1.0, phi, -h, chi)?)?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

/// Largest Euclidean norm of a history over its sampled window; the scale
/// that sizes perturbations and finite-difference steps.
pub fn window_scale(h: &dyn crate::history::History) -> f64 {
    let times = h.sample_times(h.window_hint());
    with_scratch(h.dim(), |buf| {
        let mut worst = 0.0_f64;
        for &s in &times {
            h.eval_into(s, buf);
            worst = worst.max(buf.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        worst
    })
}
