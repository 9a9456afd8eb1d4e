//! Finite representations of the history spaces.
//!
//! A history is a continuous map `(-inf, 0] -> R^n`, represented by samples
//! on a bounded window `[-D, 0]` plus a tail policy describing values below
//! the window. A trajectory extends a history forward to `(-inf, T]`. A
//! forward path is a sampled map on `[0, T]`, optionally pinned to `0` at
//! `t = 0`, used for solution increments.
//!
//! Interpolation is cubic Hermite where derivative samples are available and
//! linear otherwise. Segments (the maps `s -> x(t+s)`) are taken as views
//! into a trajectory; [`Trajectory::segment_owned`] materializes a segment
//! into a standalone history whose tail delegates back to the trajectory.

use std::fmt;
use std::io;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Relative slop tolerated when an evaluation argument overshoots an
/// interval endpoint by floating-point noise.
const DOMAIN_SLOP: f64 = 1e-9;

/// Extra evaluation points inserted between stored nodes when estimating a
/// supremum over an interval (seminorms, defect measurements).
pub const SEMINORM_OVERSAMPLE: usize = 4;

/// Runs `f` with a scratch buffer of length `dim`, stack-allocated for the
/// small dimensions that dominate in practice.
pub(crate) fn with_scratch<R>(dim: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    if dim <= 8 {
        let mut buf = [0.0_f64; 8];
        f(&mut buf[..dim])
    } else {
        let mut buf = vec![0.0_f64; dim];
        f(&mut buf)
    }
}

fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Behaviour of a history below its sampled window.
#[derive(Clone)]
pub enum TailPolicy {
    /// Continue with the value at the leftmost sample.
    ConstantExtension,
    /// Evaluate a user closure `s -> R^n` for `s` below the window.
    UserClosure(Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>),
}

impl fmt::Debug for TailPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailPolicy::ConstantExtension => write!(f, "ConstantExtension"),
            TailPolicy::UserClosure(_) => write!(f, "UserClosure"),
        }
    }
}

/// Read access to an element of the history space `C((-inf, 0], R^n)`.
///
/// Implementors guarantee continuity and must reproduce stored samples
/// exactly at nodes.
pub trait History: Send + Sync {
    fn dim(&self) -> usize;

    /// Value at `s <= 0`. Panics if `s` is positive beyond rounding slop;
    /// the checked entry points are the inherent `evaluate` methods.
    fn eval_into(&self, s: f64, out: &mut [f64]);

    /// Derivative of the interpolant at `s`, if one is defined there.
    /// Returns `false` (leaving `out` unspecified) where no derivative
    /// information exists.
    fn eval_deriv_into(&self, s: f64, out: &mut [f64]) -> bool;

    /// Natural sample times in `[-depth, 0]`: ascending, first element
    /// `-depth`, last element `0`, containing every stored node strictly
    /// inside the window.
    fn sample_times(&self, depth: f64) -> Vec<f64>;

    /// Depth of the explicitly sampled window.
    fn window_hint(&self) -> f64;

    fn eval(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(s, &mut out);
        out
    }
}

/// Piecewise interpolation over `nodes`/`values`, shared by histories and
/// trajectory forward parts. `index` is the panel search result.
fn interp_into(
    nodes: &[f64],
    values: &[f64],
    derivs: Option<&[f64]>,
    dim: usize,
    s: f64,
    out: &mut [f64],
) {
    // partition_point gives the first node > s; the panel is [idx-1, idx].
    let idx = nodes.partition_point(|&t| t <= s);
    if idx == 0 {
        out.copy_from_slice(&values[..dim]);
        return;
    }
    if idx == nodes.len() {
        let last = nodes.len() - 1;
        out.copy_from_slice(&values[last * dim..(last + 1) * dim]);
        return;
    }
    let i0 = idx - 1;
    if nodes[i0] == s {
        out.copy_from_slice(&values[i0 * dim..(i0 + 1) * dim]);
        return;
    }
    let (t0, t1) = (nodes[i0], nodes[idx]);
    let dt = t1 - t0;
    let u = (s - t0) / dt;
    let v0 = &values[i0 * dim..(i0 + 1) * dim];
    let v1 = &values[idx * dim..(idx + 1) * dim];
    match derivs {
        Some(d) => {
            // Cubic Hermite basis.
            let u2 = u * u;
            let u3 = u2 * u;
            let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
            let h10 = u3 - 2.0 * u2 + u;
            let h01 = -2.0 * u3 + 3.0 * u2;
            let h11 = u3 - u2;
            let d0 = &d[i0 * dim..(i0 + 1) * dim];
            let d1 = &d[idx * dim..(idx + 1) * dim];
            for k in 0..dim {
                out[k] = h00 * v0[k] + h10 * dt * d0[k] + h01 * v1[k] + h11 * dt * d1[k];
            }
        }
        None => {
            for k in 0..dim {
                out[k] = v0[k] + u * (v1[k] - v0[k]);
            }
        }
    }
}

/// Derivative of the interpolant of `interp_into` at `s`, clamped to the
/// sampled range.
fn interp_deriv_into(
    nodes: &[f64],
    values: &[f64],
    derivs: Option<&[f64]>,
    dim: usize,
    s: f64,
    out: &mut [f64],
) -> bool {
    if nodes.len() < 2 {
        if let Some(d) = derivs {
            out.copy_from_slice(&d[..dim]);
            return true;
        }
        return false;
    }
    let idx = nodes.partition_point(|&t| t <= s);
    let (i0, s) = if idx == 0 {
        (0, nodes[0])
    } else if idx == nodes.len() {
        (nodes.len() - 2, nodes[nodes.len() - 1])
    } else {
        (idx - 1, s)
    };
    interp_deriv_panel(nodes, values, derivs, dim, i0, s, out)
}

fn interp_deriv_panel(
    nodes: &[f64],
    values: &[f64],
    derivs: Option<&[f64]>,
    dim: usize,
    i0: usize,
    s: f64,
    out: &mut [f64],
) -> bool {
    let i1 = i0 + 1;
    let (t0, t1) = (nodes[i0], nodes[i1]);
    let dt = t1 - t0;
    let u = (s - t0) / dt;
    let v0 = &values[i0 * dim..(i0 + 1) * dim];
    let v1 = &values[i1 * dim..(i1 + 1) * dim];
    match derivs {
        Some(d) => {
            let d0 = &d[i0 * dim..(i0 + 1) * dim];
            let d1 = &d[i1 * dim..(i1 + 1) * dim];
            let u2 = u * u;
            let g00 = (6.0 * u2 - 6.0 * u) / dt;
            let g10 = 3.0 * u2 - 4.0 * u + 1.0;
            let g01 = (-6.0 * u2 + 6.0 * u) / dt;
            let g11 = 3.0 * u2 - 2.0 * u;
            for k in 0..dim {
                out[k] = g00 * v0[k] + g10 * d0[k] + g01 * v1[k] + g11 * d1[k];
            }
        }
        None => {
            for k in 0..dim {
                out[k] = (v1[k] - v0[k]) / dt;
            }
        }
    }
    true
}

fn check_strictly_increasing(nodes: &[f64]) -> Result<()> {
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Invariant(format!(
                "nodes not strictly increasing at {} >= {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// HistoryFunction
// ---------------------------------------------------------------------------

/// A finitely represented element of `C((-inf, 0], R^n)`: samples on
/// `[-D, 0]` plus a [`TailPolicy`] for `s < -D`.
#[derive(Clone, Debug)]
pub struct HistoryFunction {
    dim: usize,
    nodes: Vec<f64>,
    values: Vec<f64>,
    deriv_values: Option<Vec<f64>>,
    tail: TailPolicy,
}

impl HistoryFunction {
    /// Builds a history from explicit samples. `nodes` must be strictly
    /// increasing with the last node exactly `0`.
    pub fn from_samples(
        dim: usize,
        nodes: Vec<f64>,
        values: Vec<f64>,
        deriv_values: Option<Vec<f64>>,
        tail: TailPolicy,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invariant("dim must be positive".into()));
        }
        if nodes.is_empty() || *nodes.last().unwrap() != 0.0 {
            return Err(Error::Invariant("last node must be exactly 0".into()));
        }
        check_strictly_increasing(&nodes)?;
        if values.len() != nodes.len() * dim {
            return Err(Error::Invariant("values length mismatch".into()));
        }
        check_finite(&values, "history values")?;
        if let Some(d) = &deriv_values {
            if d.len() != values.len() {
                return Err(Error::Invariant("deriv_values length mismatch".into()));
            }
            check_finite(d, "history derivative values")?;
        }
        Ok(Self { dim, nodes, values, deriv_values, tail })
    }

    /// The constant history `phi == c`, with zero derivative samples.
    pub fn constant(value: &[f64]) -> Self {
        Self {
            dim: value.len(),
            nodes: vec![0.0],
            values: value.to_vec(),
            deriv_values: Some(vec![0.0; value.len()]),
            tail: TailPolicy::ConstantExtension,
        }
    }

    /// Samples `f` on `[-depth, 0]` at spacing about `step` and keeps `f`
    /// itself as the tail, so evaluation below the window stays exact.
    pub fn from_fn(
        dim: usize,
        depth: f64,
        step: f64,
        f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::from_fn_impl(dim, depth, step, f, None::<fn(f64) -> Vec<f64>>)
    }

    /// Like [`HistoryFunction::from_fn`], with derivative samples from `df`
    /// enabling cubic interpolation.
    pub fn from_fn_deriv(
        dim: usize,
        depth: f64,
        step: f64,
        f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        df: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::from_fn_impl(dim, depth, step, f, Some(df))
    }

    fn from_fn_impl(
        dim: usize,
        depth: f64,
        step: f64,
        f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        df: Option<impl Fn(f64) -> Vec<f64> + Send + Sync + 'static>,
    ) -> Self {
        assert!(dim > 0 && depth >= 0.0 && step > 0.0);
        let panels = ((depth / step).round() as usize).max(1);
        let h = depth / panels as f64;
        let mut nodes = Vec::with_capacity(panels + 1);
        let mut values = Vec::with_capacity((panels + 1) * dim);
        let mut derivs = df.as_ref().map(|_| Vec::with_capacity((panels + 1) * dim));
        for i in 0..=panels {
            let s = if i == panels { 0.0 } else { -depth + i as f64 * h };
            nodes.push(s);
            let v = f(s);
            assert_eq!(v.len(), dim);
            values.extend_from_slice(&v);
            if let (Some(d), Some(dfn)) = (derivs.as_mut(), df.as_ref()) {
                d.extend_from_slice(&dfn(s));
            }
        }
        if depth == 0.0 {
            nodes.truncate(1);
            nodes[0] = 0.0;
            values.truncate(dim);
            if let Some(d) = derivs.as_mut() {
                d.truncate(dim);
            }
        }
        Self {
            dim,
            nodes,
            values,
            deriv_values: derivs,
            tail: TailPolicy::UserClosure(Arc::new(move |s, out| {
                out.copy_from_slice(&f(s));
            })),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Depth `D` of the sampled window `[-D, 0]`.
    pub fn window_depth(&self) -> f64 {
        -self.nodes[0]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn deriv_values(&self) -> Option<&[f64]> {
        self.deriv_values.as_deref()
    }

    pub fn value_at_node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Checked evaluation; `s` must satisfy `s <= 0`.
    pub fn evaluate(&self, s: f64) -> Result<Vec<f64>> {
        if s > DOMAIN_SLOP {
            return Err(Error::OutOfRange { arg: s, lo: f64::NEG_INFINITY, hi: 0.0 });
        }
        Ok(self.eval(s.min(0.0)))
    }
}

impl History for HistoryFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, s: f64, out: &mut [f64]) {
        debug_assert!(s <= DOMAIN_SLOP, "history evaluated at positive time {s}");
        let s = s.min(0.0);
        if s < self.nodes[0] {
            match &self.tail {
                TailPolicy::ConstantExtension => out.copy_from_slice(&self.values[..self.dim]),
                TailPolicy::UserClosure(f) => f(s, out),
            }
            return;
        }
        interp_into(&self.nodes, &self.values, self.deriv_values.as_deref(), self.dim, s, out);
    }

    fn eval_deriv_into(&self, s: f64, out: &mut [f64]) -> bool {
        let s = s.min(0.0);
        if s < self.nodes[0] {
            return match &self.tail {
                TailPolicy::ConstantExtension => {
                    out.fill(0.0);
                    true
                }
                TailPolicy::UserClosure(_) => false,
            };
        }
        if self.nodes.len() == 1 {
            return match &self.deriv_values {
                Some(d) => {
                    out.copy_from_slice(&d[..self.dim]);
                    true
                }
                None => false,
            };
        }
        interp_deriv_into(&self.nodes, &self.values, self.deriv_values.as_deref(), self.dim, s, out)
    }

    fn sample_times(&self, depth: f64) -> Vec<f64> {
        sample_times_from_nodes(&self.nodes, 0.0, depth)
    }

    fn window_hint(&self) -> f64 {
        self.window_depth()
    }
}

/// Shared helper: node times of some object shifted so that `origin` maps to
/// `0`, restricted to `[-depth, 0]`, with both endpoints present.
fn sample_times_from_nodes(nodes: &[f64], origin: f64, depth: f64) -> Vec<f64> {
    let lo = origin - depth;
    let mut out = Vec::new();
    out.push(-depth);
    if depth > 0.0 {
        for &t in nodes {
            if t > lo && t < origin {
                let s = t - origin;
                if s > -depth && s < 0.0 {
                    out.push(s);
                }
            }
        }
        out.push(0.0);
    }
    out.dedup();
    out
}

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

/// An element of `C((-inf, T], R^n)`: an initial history plus computed
/// forward samples on `[0, T]` with (optionally) the derivative values
/// `f(x_t)` stored alongside for cubic dense output.
#[derive(Clone, Debug)]
pub struct Trajectory {
    base: HistoryFunction,
    fwd_nodes: Vec<f64>,
    fwd_values: Vec<f64>,
    fwd_derivs: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(
        base: HistoryFunction,
        fwd_nodes: Vec<f64>,
        fwd_values: Vec<f64>,
        fwd_derivs: Option<Vec<f64>>,
    ) -> Result<Self> {
        let dim = base.dim();
        if fwd_nodes.is_empty() || fwd_nodes[0] != 0.0 {
            return Err(Error::Invariant("forward nodes must start at exactly 0".into()));
        }
        check_strictly_increasing(&fwd_nodes)?;
        if fwd_values.len() != fwd_nodes.len() * dim {
            return Err(Error::Invariant("forward values length mismatch".into()));
        }
        check_finite(&fwd_values, "trajectory values")?;
        if let Some(d) = &fwd_derivs {
            if d.len() != fwd_values.len() {
                return Err(Error::Invariant("forward derivs length mismatch".into()));
            }
        }
        let head = with_scratch(dim, |buf| {
            base.eval_into(0.0, buf);
            buf.to_vec()
        });
        if head != fwd_values[..dim] {
            return Err(Error::Invariant(
                "discontinuity at t = 0: forward value differs from history value".into(),
            ));
        }
        Ok(Self { base, fwd_nodes, fwd_values, fwd_derivs })
    }

    /// The trajectory of horizon `0` that is just `phi`.
    pub fn from_history(base: HistoryFunction) -> Self {
        let value = base.eval(0.0);
        Self { base, fwd_nodes: vec![0.0], fwd_values: value, fwd_derivs: None }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn horizon(&self) -> f64 {
        *self.fwd_nodes.last().unwrap()
    }

    pub fn base(&self) -> &HistoryFunction {
        &self.base
    }

    pub fn fwd_nodes(&self) -> &[f64] {
        &self.fwd_nodes
    }

    pub fn fwd_values(&self) -> &[f64] {
        &self.fwd_values
    }

    pub fn fwd_derivs(&self) -> Option<&[f64]> {
        self.fwd_derivs.as_deref()
    }

    pub fn fwd_value_at(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.fwd_values[i * d..(i + 1) * d]
    }

    /// Unchecked evaluation on `(-inf, horizon]` (with rounding slop).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if t <= 0.0 {
            self.base.eval_into(t, out);
            return;
        }
        let hz = self.horizon();
        debug_assert!(
            t <= hz + DOMAIN_SLOP * (1.0 + hz.abs()),
            "trajectory evaluated at {t} beyond horizon {hz}"
        );
        let t = t.min(hz);
        interp_into(
            &self.fwd_nodes,
            &self.fwd_values,
            self.fwd_derivs.as_deref(),
            self.dim(),
            t,
            out,
        );
    }

    pub fn eval_deriv_into(&self, t: f64, out: &mut [f64]) -> bool {
        if t <= 0.0 {
            return self.base.eval_deriv_into(t, out);
        }
        let t = t.min(self.horizon());
        if self.fwd_nodes.len() == 1 {
            return false;
        }
        interp_deriv_into(
            &self.fwd_nodes,
            &self.fwd_values,
            self.fwd_derivs.as_deref(),
            self.dim(),
            t,
            out,
        )
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    /// Checked evaluation; `t` must satisfy `t <= horizon`.
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        let hz = self.horizon();
        if t > hz + DOMAIN_SLOP * (1.0 + hz.abs()) {
            return Err(Error::OutOfRange { arg: t, lo: f64::NEG_INFINITY, hi: hz });
        }
        Ok(self.eval(t))
    }

    /// Replaces the forward derivative samples (the values `f(x_t)`).
    pub fn set_fwd_derivs(&mut self, derivs: Vec<f64>) -> Result<()> {
        if derivs.len() != self.fwd_values.len() {
            return Err(Error::Invariant("forward derivs length mismatch".into()));
        }
        self.fwd_derivs = Some(derivs);
        Ok(())
    }

    /// Appends a freshly solved step whose local time `0` coincides with
    /// this trajectory's current horizon. The step must carry derivative
    /// samples and must agree with the current endpoint value.
    pub fn append_step(&mut self, step: &Trajectory) -> Result<()> {
        let dim = self.dim();
        if step.dim() != dim {
            return Err(Error::Invariant("dimension mismatch in append".into()));
        }
        let step_derivs = step
            .fwd_derivs
            .as_deref()
            .ok_or_else(|| Error::Invariant("appended step lacks derivative samples".into()))?;
        let offset = self.horizon();
        let end = self.fwd_value_at(self.fwd_nodes.len() - 1).to_vec();
        let start = &step.fwd_values[..dim];
        let scale = 1.0 + end.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..dim {
            if (end[k] - start[k]).abs() > 1e-9 * scale {
                return Err(Error::Invariant(format!(
                    "appended step value {} differs from trajectory endpoint {}",
                    start[k], end[k]
                )));
            }
        }
        // The trajectory gains derivative data with its first appended step;
        // node 0 of the step supplies the derivative at the junction.
        if self.fwd_derivs.is_none() {
            if self.fwd_nodes.len() != 1 {
                return Err(Error::Invariant(
                    "cannot append to a multi-node trajectory without derivatives".into(),
                ));
            }
            self.fwd_derivs = Some(step_derivs[..dim].to_vec());
        }
        let derivs = self.fwd_derivs.as_mut().unwrap();
        for i in 1..step.fwd_nodes.len() {
            self.fwd_nodes.push(offset + step.fwd_nodes[i]);
            self.fwd_values.extend_from_slice(step.fwd_value_at(i));
            derivs.extend_from_slice(&step_derivs[i * dim..(i + 1) * dim]);
        }
        check_strictly_increasing(&self.fwd_nodes)
    }

    /// Materializes the segment `x_t` as an owned history. The sampled
    /// window covers at most the computed span `[-min(depth, t), 0]`, where
    /// the solution is C^1 and samples (with derivatives) can be copied
    /// bitwise from stored nodes; everything older is served exactly by the
    /// delegating tail, which dispatches across the history/forward junction
    /// where the derivative may jump.
    pub fn segment_owned(this: &Arc<Trajectory>, t: f64, depth: f64) -> Result<HistoryFunction> {
        let hz = this.horizon();
        if !(0.0..=hz + DOMAIN_SLOP * (1.0 + hz.abs())).contains(&t) {
            return Err(Error::OutOfRange { arg: t, lo: 0.0, hi: hz });
        }
        let t = t.min(hz);
        let dim = this.dim();
        let depth = depth.max(0.0).min(t);
        let lo = t - depth;

        let mut nodes: Vec<f64> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut deriv_acc: Vec<f64> = Vec::new();
        let mut have_derivs = true;

        if depth > 0.0 {
            // Left anchor at s = -depth; `lo >= 0`, so value and derivative
            // come from the forward arrays (the right-hand side of any
            // derivative jump at time 0).
            nodes.push(-depth);
            let mut buf = vec![0.0; dim];
            interp_into(
                &this.fwd_nodes,
                &this.fwd_values,
                this.fwd_derivs.as_deref(),
                dim,
                lo,
                &mut buf,
            );
            values.extend_from_slice(&buf);
            if interp_deriv_into(
                &this.fwd_nodes,
                &this.fwd_values,
                this.fwd_derivs.as_deref(),
                dim,
                lo,
                &mut buf,
            ) && this.fwd_derivs.is_some()
            {
                deriv_acc.extend_from_slice(&buf);
            } else {
                have_derivs = false;
            }

            // Forward samples strictly inside (-depth, 0], copied bitwise.
            let fwd_derivs = this.fwd_derivs.as_deref();
            for (i, &ft) in this.fwd_nodes.iter().enumerate() {
                let s = ft - t;
                if s <= -depth || s > 0.0 {
                    continue;
                }
                nodes.push(s);
                values.extend_from_slice(this.fwd_value_at(i));
                match fwd_derivs {
                    Some(d) if have_derivs => deriv_acc.extend_from_slice(&d[i * dim..(i + 1) * dim]),
                    _ => have_derivs = false,
                }
            }
        }
        // Right endpoint s = 0 must be present and exact.
        if nodes.last() != Some(&0.0) {
            nodes.push(0.0);
            let mut buf = vec![0.0; dim];
            this.eval_into(t, &mut buf);
            values.extend_from_slice(&buf);
            if have_derivs {
                if this.fwd_derivs.is_some()
                    && interp_deriv_into(
                        &this.fwd_nodes,
                        &this.fwd_values,
                        this.fwd_derivs.as_deref(),
                        dim,
                        t,
                        &mut buf,
                    )
                {
                    deriv_acc.extend_from_slice(&buf);
                } else {
                    have_derivs = false;
                }
            }
        }

        let handle = Arc::clone(this);
        let tail = TailPolicy::UserClosure(Arc::new(move |s, out| {
            handle.eval_into(t + s, out);
        }));
        let derivs = have_derivs.then_some(deriv_acc);
        HistoryFunction::from_samples(dim, nodes, values, derivs, tail)
    }
}

impl History for Trajectory {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval_into(&self, s: f64, out: &mut [f64]) {
        Trajectory::eval_into(self, s, out)
    }

    fn eval_deriv_into(&self, s: f64, out: &mut [f64]) -> bool {
        Trajectory::eval_deriv_into(self, s, out)
    }

    fn sample_times(&self, depth: f64) -> Vec<f64> {
        let t = self.horizon();
        let mut all: Vec<f64> = self
            .base
            .nodes()
            .iter()
            .chain(self.fwd_nodes.iter().skip(1))
            .copied()
            .collect();
        all.dedup();
        sample_times_from_nodes(&all, t, depth)
    }

    fn window_hint(&self) -> f64 {
        self.horizon() + self.base.window_depth()
    }
}

/// Extracts the segment `x_t` as a borrowed view: evaluation delegates to
/// the trajectory, so it is exact on all of `(-inf, 0]` and costs nothing
/// to construct. `depth` is the window hint used for probing and
/// materialization.
pub fn segment(x: &Trajectory, t: f64, depth: f64) -> Result<SegmentView<'_>> {
    let hz = x.horizon();
    if !(-DOMAIN_SLOP..=hz + DOMAIN_SLOP * (1.0 + hz.abs())).contains(&t) {
        return Err(Error::OutOfRange { arg: t, lo: 0.0, hi: hz });
    }
    Ok(SegmentView { traj: x, t: t.clamp(0.0, hz), depth })
}

/// View of a trajectory at a fixed time: the history `s -> x(t+s)`.
#[derive(Clone, Copy)]
pub struct SegmentView<'a> {
    traj: &'a Trajectory,
    t: f64,
    depth: f64,
}

impl SegmentView<'_> {
    pub fn time(&self) -> f64 {
        self.t
    }
}

impl History for SegmentView<'_> {
    fn dim(&self) -> usize {
        self.traj.dim()
    }

    fn eval_into(&self, s: f64, out: &mut [f64]) {
        debug_assert!(s <= DOMAIN_SLOP);
        self.traj.eval_into(self.t + s.min(0.0), out);
    }

    fn eval_deriv_into(&self, s: f64, out: &mut [f64]) -> bool {
        self.traj.eval_deriv_into(self.t + s.min(0.0), out)
    }

    fn sample_times(&self, depth: f64) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .traj
            .base
            .nodes()
            .iter()
            .chain(self.traj.fwd_nodes.iter().skip(1))
            .copied()
            .collect();
        all.dedup();
        sample_times_from_nodes(&all, self.t, depth)
    }

    fn window_hint(&self) -> f64 {
        self.depth
    }
}

/// Materializes any history into an owned [`HistoryFunction`] sampled on
/// `[-depth, 0]` with constant extension below. For functionals of locally
/// bounded delay this is an exact stand-in whenever `depth` covers the
/// functional's read window.
pub fn materialize(h: &dyn History, depth: f64) -> HistoryFunction {
    let dim = h.dim();
    let times = h.sample_times(depth);
    let mut values = Vec::with_capacity(times.len() * dim);
    let mut derivs = Some(Vec::with_capacity(times.len() * dim));
    with_scratch(dim, |buf| {
        for &s in &times {
            h.eval_into(s, buf);
            values.extend_from_slice(buf);
            if let Some(acc) = derivs.as_mut() {
                if h.eval_deriv_into(s, buf) {
                    acc.extend_from_slice(buf);
                } else {
                    derivs = None;
                }
            }
        }
    });
    HistoryFunction::from_samples(dim, times, values, derivs, TailPolicy::ConstantExtension)
        .expect("materialized samples are well-formed")
}

// ---------------------------------------------------------------------------
// ForwardPath
// ---------------------------------------------------------------------------

/// A sampled continuous path on `[0, T]`; with `zero_at_origin` it is an
/// element of the space of increments (paths vanishing at `0`).
#[derive(Clone, Debug)]
pub struct ForwardPath {
    dim: usize,
    nodes: Vec<f64>,
    values: Vec<f64>,
    zero_at_origin: bool,
}

impl ForwardPath {
    pub fn new(dim: usize, nodes: Vec<f64>, values: Vec<f64>, zero_at_origin: bool) -> Result<Self> {
        if dim == 0 || nodes.is_empty() || nodes[0] != 0.0 {
            return Err(Error::Invariant("path nodes must start at exactly 0".into()));
        }
        check_strictly_increasing(&nodes)?;
        if values.len() != nodes.len() * dim {
            return Err(Error::Invariant("path values length mismatch".into()));
        }
        check_finite(&values, "path values")?;
        if zero_at_origin && values[..dim].iter().any(|&v| v != 0.0) {
            return Err(Error::Invariant("zero_at_origin path must vanish at t = 0".into()));
        }
        Ok(Self { dim, nodes, values, zero_at_origin })
    }

    /// The zero increment on the given grid.
    pub fn zeros(dim: usize, nodes: Vec<f64>) -> Self {
        let n = nodes.len();
        Self { dim, nodes, values: vec![0.0; n * dim], zero_at_origin: true }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn zero_at_origin(&self) -> bool {
        self.zero_at_origin
    }

    pub fn value_at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Maximum Euclidean norm over the stored nodes.
    pub fn sup_norm(&self) -> f64 {
        (0..self.nodes.len()).map(|i| euclid_norm(self.value_at(i))).fold(0.0, f64::max)
    }

    /// Maximum Euclidean norm of the node-wise difference. Panics unless the
    /// two paths share their grid.
    pub fn sup_distance(&self, other: &ForwardPath) -> f64 {
        assert_eq!(self.nodes, other.nodes, "paths must share a grid");
        let mut worst = 0.0_f64;
        for i in 0..self.nodes.len() {
            let a = self.value_at(i);
            let b = other.value_at(i);
            let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            worst = worst.max(d);
        }
        worst
    }

    /// Node-wise linear combination `a*self + b*other` on a shared grid.
    pub fn axpy(&self, a: f64, other: &ForwardPath, b: f64) -> Result<ForwardPath> {
        if self.nodes != other.nodes || self.dim != other.dim {
            return Err(Error::Invariant("paths must share a grid for axpy".into()));
        }
        let values: Vec<f64> =
            self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        ForwardPath::new(
            self.dim,
            self.nodes.clone(),
            values,
            self.zero_at_origin && other.zero_at_origin,
        )
    }

    /// Linear interpolation at `t` in `[0, T]`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        interp_into(&self.nodes, &self.values, None, self.dim, t, &mut out);
        out
    }
}

// ---------------------------------------------------------------------------
// Operators between the spaces
// ---------------------------------------------------------------------------

/// Constant prolongation: equals `phi` on `(-inf, 0]` and `phi(0)` on
/// `[0, T]`. Linear interpolation between the two equal endpoint samples
/// reproduces the constant bitwise.
pub fn prolong_const(phi: &HistoryFunction, horizon: f64) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(Error::OutOfRange { arg: horizon, lo: 0.0, hi: f64::INFINITY });
    }
    let head = phi.eval(0.0);
    let mut values = head.clone();
    values.extend_from_slice(&head);
    Trajectory::new(phi.clone(), vec![0.0, horizon], values, None)
}

/// Extension by zero: `0` on `(-inf, 0]`, `eta` on `[0, T]`. Requires
/// `eta(0) = 0` so the result is continuous.
pub fn zero_extend(eta: &ForwardPath) -> Result<Trajectory> {
    if !eta.zero_at_origin {
        return Err(Error::Invariant("zero_extend requires a path vanishing at 0".into()));
    }
    let base = HistoryFunction::constant(&vec![0.0; eta.dim()]);
    Trajectory::new(base, eta.nodes.clone(), eta.values.clone(), None)
}

/// The concatenation `J(eta, phi)`: `phi` on `(-inf, 0]` and
/// `phi(0) + eta(t)` on `[0, T]`. `concat(0, phi)` equals the constant
/// prolongation of `phi`.
pub fn concat(eta: &ForwardPath, phi: &HistoryFunction) -> Result<Trajectory> {
    if !eta.zero_at_origin {
        return Err(Error::Invariant("concat requires an increment vanishing at 0".into()));
    }
    let dim = phi.dim();
    if eta.dim() != dim {
        return Err(Error::Invariant("dimension mismatch in concat".into()));
    }
    let head = phi.eval(0.0);
    let mut values = Vec::with_capacity(eta.values.len());
    for i in 0..eta.nodes.len() {
        let ev = eta.value_at(i);
        for k in 0..dim {
            values.push(head[k] + ev[k]);
        }
    }
    Trajectory::new(phi.clone(), eta.nodes.clone(), values, None)
}

/// Odd prolongation through `(0, phi(0))`: returns `phi(s)` for `s <= 0`
/// and `2 phi(0) - phi(-s)` for `s > 0`.
pub fn odd_prolong_into(phi: &dyn History, s: f64, out: &mut [f64]) {
    if s <= 0.0 {
        phi.eval_into(s, out);
        return;
    }
    with_scratch(phi.dim(), |head| {
        phi.eval_into(0.0, head);
        phi.eval_into(-s, out);
        for k in 0..out.len() {
            out[k] = 2.0 * head[k] - out[k];
        }
    });
}

pub fn odd_prolong(phi: &dyn History, s: f64) -> Vec<f64> {
    let mut out = vec![0.0; phi.dim()];
    odd_prolong_into(phi, s, &mut out);
    out
}

/// Pointwise linear combination `a*x + b*y` of two histories, sampled on
/// the union of their node sets. The tail stays exact: constant extension
/// when both inputs extend constantly, a delegating closure otherwise.
pub fn axpy_history(a: f64, x: &HistoryFunction, b: f64, y: &HistoryFunction) -> Result<HistoryFunction> {
    let dim = x.dim();
    if y.dim() != dim {
        return Err(Error::Invariant("dimension mismatch in axpy_history".into()));
    }
    let mut nodes: Vec<f64> = x.nodes().iter().chain(y.nodes()).copied().collect();
    nodes.sort_by(|p, q| p.partial_cmp(q).unwrap());
    nodes.dedup();
    let mut values = Vec::with_capacity(nodes.len() * dim);
    with_scratch(dim, |bx| {
        with_scratch(dim, |by| {
            for &s in &nodes {
                x.eval_into(s, bx);
                y.eval_into(s, by);
                for k in 0..dim {
                    values.push(a * bx[k] + b * by[k]);
                }
            }
        })
    });
    let tail = match (&x.tail, &y.tail) {
        (TailPolicy::ConstantExtension, TailPolicy::ConstantExtension) => {
            TailPolicy::ConstantExtension
        }
        _ => {
            let (xc, yc) = (x.clone(), y.clone());
            TailPolicy::UserClosure(Arc::new(move |s, out| {
                with_scratch(xc.dim(), |bx| {
                    xc.eval_into(s, bx);
                    yc.eval_into(s, out);
                    for k in 0..out.len() {
                        out[k] = a * bx[k] + b * out[k];
                    }
                });
            }))
        }
    };
    HistoryFunction::from_samples(dim, nodes, values, None, tail)
}

// ---------------------------------------------------------------------------
// Seminorms
// ---------------------------------------------------------------------------

/// Index `j >= 1` of the seminorm `max_{T-j <= t <= T} |phi(t)|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeminormIndex(u32);

impl SeminormIndex {
    pub fn new(j: u32) -> Result<Self> {
        if j == 0 {
            return Err(Error::Invariant("seminorm index must be >= 1".into()));
        }
        Ok(Self(j))
    }

    pub fn window(&self) -> f64 {
        f64::from(self.0)
    }
}

fn sup_over_window(
    n_points_hint: &[f64],
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    let mut worst = 0.0_f64;
    for w in n_points_hint.windows(2) {
        worst = worst.max(f(w[0]));
        let h = (w[1] - w[0]) / (SEMINORM_OVERSAMPLE as f64);
        for k in 1..SEMINORM_OVERSAMPLE {
            worst = worst.max(f(w[0] + k as f64 * h));
        }
    }
    worst = worst.max(f(*n_points_hint.last().unwrap()));
    worst
}

/// The seminorm `|x|_{T,j}`: maximum Euclidean norm over `[T-j, T]`,
/// estimated over stored nodes with a fixed oversampling factor between
/// them.
pub fn seminorm(x: &Trajectory, j: SeminormIndex) -> f64 {
    let hi = x.horizon();
    let lo = hi - j.window();
    let mut anchors = vec![lo];
    for &t in x.base.nodes().iter().chain(x.fwd_nodes.iter()) {
        if t > lo && t < hi {
            anchors.push(t);
        }
    }
    anchors.push(hi);
    anchors.dedup();
    let dim = x.dim();
    with_scratch(dim, |buf| {
        sup_over_window(&anchors, |t| {
            x.eval_into(t, buf);
            euclid_norm(buf)
        })
    })
}

/// Seminorm of the difference of two histories over `[-j, 0]`, the defect
/// statistic used by the semigroup / cocycle / uniqueness checks.
pub fn seminorm_diff(a: &dyn History, b: &dyn History, j: SeminormIndex) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mut anchors = a.sample_times(j.window());
    anchors.extend(b.sample_times(j.window()));
    anchors.sort_by(|p, q| p.partial_cmp(q).unwrap());
    anchors.dedup();
    let dim = a.dim();
    with_scratch(dim, |ba| {
        with_scratch(dim, |bb| {
            sup_over_window(&anchors, |s| {
                a.eval_into(s, ba);
                b.eval_into(s, bb);
                ba.iter().zip(bb.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            })
        })
    })
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

fn csv_err<E: fmt::Display>(e: E) -> Error {
    Error::Csv(e.to_string())
}

fn write_csv_rows<W: io::Write>(
    w: &mut W,
    dim: usize,
    with_derivs: bool,
    rows: impl Iterator<Item = (f64, Vec<f64>, Option<Vec<f64>>)>,
) -> Result<()> {
    let mut header = String::from("t");
    for k in 1..=dim {
        header.push_str(&format!(",x{k}"));
    }
    if with_derivs {
        for k in 1..=dim {
            header.push_str(&format!(",d{k}"));
        }
    }
    writeln!(w, "{header}").map_err(csv_err)?;
    for (t, v, d) in rows {
        let mut line = format!("{t}");
        for x in &v {
            line.push_str(&format!(",{x}"));
        }
        if with_derivs {
            let d = d.expect("derivative column present");
            for x in &d {
                line.push_str(&format!(",{x}"));
            }
        }
        writeln!(w, "{line}").map_err(csv_err)?;
    }
    Ok(())
}

/// Writes `t,x1,...,xn[,d1,...,dn]` rows for the sampled window of a
/// history, sorted by `t`. Derivative columns appear when samples exist.
pub fn write_history_csv<W: io::Write>(w: &mut W, phi: &HistoryFunction) -> Result<()> {
    let dim = phi.dim();
    let with_d = phi.deriv_values.is_some();
    let rows = phi.nodes.iter().enumerate().map(|(i, &t)| {
        (
            t,
            phi.value_at_node(i).to_vec(),
            phi.deriv_values.as_ref().map(|d| d[i * dim..(i + 1) * dim].to_vec()),
        )
    });
    write_csv_rows(w, dim, with_d, rows)
}

/// Writes the full trajectory (history window then forward samples) as CSV.
pub fn write_trajectory_csv<W: io::Write>(w: &mut W, x: &Trajectory) -> Result<()> {
    let dim = x.dim();
    let with_d = x.base.deriv_values.is_some() && x.fwd_derivs.is_some();
    let base = &x.base;
    let base_rows = base.nodes.iter().enumerate().filter(|(_, &t)| t < 0.0).map(|(i, &t)| {
        (
            t,
            base.value_at_node(i).to_vec(),
            base.deriv_values.as_ref().map(|d| d[i * dim..(i + 1) * dim].to_vec()),
        )
    });
    let fwd_rows = x.fwd_nodes.iter().enumerate().map(|(i, &t)| {
        (
            t,
            x.fwd_value_at(i).to_vec(),
            x.fwd_derivs.as_ref().map(|d| d[i * dim..(i + 1) * dim].to_vec()),
        )
    });
    write_csv_rows(w, dim, with_d, base_rows.chain(fwd_rows))
}

/// Reads a history from `t,x1,...,xn[,d1,...,dn]` rows. Times must be
/// ascending and end at exactly `0`.
pub fn read_history_csv<R: io::Read>(r: &mut R) -> Result<HistoryFunction> {
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(csv_err)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Csv("empty input".into()))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Csv(format!("expected header starting with 't', got '{header}'")));
    }
    let n_x = cols.iter().filter(|c| c.starts_with('x')).count();
    let n_d = cols.iter().filter(|c| c.starts_with('d')).count();
    if n_x == 0 || (n_d != 0 && n_d != n_x) || cols.len() != 1 + n_x + n_d {
        return Err(Error::Csv(format!("malformed header '{header}'")));
    }
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    let mut derivs = if n_d > 0 { Some(Vec::new()) } else { None };
    for line in lines {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Csv(format!("row has {} fields, expected {}", fields.len(), cols.len())));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(csv_err);
        nodes.push(parse(fields[0])?);
        for f in &fields[1..=n_x] {
            values.push(parse(f)?);
        }
        if let Some(d) = derivs.as_mut() {
            for f in &fields[1 + n_x..] {
                d.push(parse(f)?);
            }
        }
    }
    HistoryFunction::from_samples(n_x, nodes, values, derivs, TailPolicy::ConstantExtension)
}
