//! Deterministic flows `φ_s` for each chain state, and their composition
//! along a switching sequence.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Right-hand side `dx/dt = f(x, s)`, written into the output slice.
pub type FieldFn = dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync;

/// Closed-form flow `(x, s, duration) ↦ φ_s(duration, x)`.
pub type AnalyticFlowFn = dyn Fn(&[f64], usize, f64, &mut [f64]) + Send + Sync;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("state became non-finite while integrating state {state} (x = {x:?})")]
    NonFiniteState { state: usize, x: Vec<f64> },
    #[error("state sequence has {got} entries, {needed} needed")]
    SequenceTooShort { got: usize, needed: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One vector field per chain state, all on the same `ℝ^d`.
#[derive(Clone)]
pub struct VectorFieldFamily {
    dim: usize,
    state_values: Vec<f64>,
    field: Arc<FieldFn>,
    analytic: Option<Arc<AnalyticFlowFn>>,
}

impl fmt::Debug for VectorFieldFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldFamily")
            .field("dim", &self.dim)
            .field("state_values", &self.state_values)
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

impl VectorFieldFamily {
    /// `state_values[s]` is the perturbation parameter of state `s`
    /// (informational; the field closure decides how it is used).
    pub fn new<F>(dim: usize, state_values: Vec<f64>, field: F) -> Self
    where
        F: Fn(&[f64], usize, &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim > 0, "dimension must be positive");
        assert!(!state_values.is_empty(), "at least one state required");
        Self { dim, state_values, field: Arc::new(field), analytic: None }
    }

    pub fn with_analytic_flow<G>(mut self, flow: G) -> Self
    where
        G: Fn(&[f64], usize, f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.analytic = Some(Arc::new(flow));
        self
    }

    /// Same fields with the closed-form flow removed, forcing RK4.
    pub fn without_analytic_flow(&self) -> Self {
        Self { analytic: None, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state_count(&self) -> usize {
        self.state_values.len()
    }

    pub fn state_values(&self) -> &[f64] {
        &self.state_values
    }

    pub fn has_analytic_flow(&self) -> bool {
        self.analytic.is_some()
    }

    pub fn eval(&self, x: &[f64], state: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.field)(x, state, &mut out);
        out
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], state: usize, out: &mut [f64]) {
        (self.field)(x, state, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegrationMethod {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSettings {
    pub step: f64,
    pub method: IntegrationMethod,
}

impl IntegratorSettings {
    pub fn rk4(step: f64) -> Self {
        Self { step, method: IntegrationMethod::Rk4 }
    }

    /// The default resolution: 100 steps per switching period.
    pub fn default_for_period(h: f64) -> Self {
        Self::rk4(h / 100.0)
    }

    pub fn validate(&self, h: f64) -> Result<(), FlowError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(FlowError::InvalidArgument(format!("step {} must be positive", self.step)));
        }
        if self.step > h * (1.0 + 1e-12) {
            return Err(FlowError::InvalidArgument(format!("step {} exceeds switching period {h}", self.step)));
        }
        Ok(())
    }
}

/// Scratch space for RK4 stages.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Self { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], tmp: vec![0.0; dim] }
    }

    fn step(&mut self, fields: &VectorFieldFamily, s: usize, x: &mut [f64], dt: f64) {
        let n = x.len();
        fields.eval_into(x, s, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k1[i];
        }
        fields.eval_into(&self.tmp, s, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k2[i];
        }
        fields.eval_into(&self.tmp, s, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        fields.eval_into(&self.tmp, s, &mut self.k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Splits `duration` into `n` RK4 steps of `step`, the last one shortened
/// (or stretched by round-off) so the steps add up to `duration` exactly.
fn step_plan(duration: f64, step: f64) -> (usize, f64) {
    let ratio = duration / step;
    let nearest = ratio.round();
    let n = if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) { nearest as usize } else { ratio.ceil() as usize };
    let n = n.max(1);
    (n, duration - (n - 1) as f64 * step)
}

fn check_finite(x: &[f64], state: usize) -> Result<(), FlowError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FlowError::NonFiniteState { state, x: x.to_vec() })
    }
}

/// `φ_s(duration, x)` written back into `x`.
pub fn flow_map_in_place(
    fields: &VectorFieldFamily,
    x: &mut [f64],
    s: usize,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<(), FlowError> {
    if !(duration >= 0.0) {
        return Err(FlowError::InvalidArgument(format!("duration {duration} is negative")));
    }
    check_finite(x, s)?;
    if duration == 0.0 {
        return Ok(());
    }
    if let Some(analytic) = &fields.analytic {
        let x0 = x.to_vec();
        analytic(&x0, s, duration, x);
        return check_finite(x, s);
    }
    match settings.method {
        IntegrationMethod::Rk4 => {
            let (n, last) = step_plan(duration, settings.step);
            let mut rk = Rk4::new(x.len());
            for _ in 0..n - 1 {
                rk.step(fields, s, x, settings.step);
            }
            rk.step(fields, s, x, last);
        }
    }
    check_finite(x, s)
}

/// `φ_s(duration, x)`: the closed-form flow when the family has one,
/// otherwise fixed-step RK4.
pub fn flow_map(
    fields: &VectorFieldFamily,
    x: &[f64],
    s: usize,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<Vec<f64>, FlowError> {
    let mut out = x.to_vec();
    flow_map_in_place(fields, &mut out, s, duration, settings)?;
    Ok(out)
}

/// Position at time `t` under the switching sequence `states`, where
/// `states[n]` holds on `[n h, (n + 1) h)`.
///
/// At `t = n h` the result is the endpoint of the flow under `states[n-1]`,
/// so `ceil(t / h)` states are consumed.
pub fn hybrid_flow(
    fields: &VectorFieldFamily,
    x0: &[f64],
    states: &[usize],
    h: f64,
    t: f64,
    settings: &IntegratorSettings,
) -> Result<Vec<f64>, FlowError> {
    if !(h > 0.0) || !(t >= 0.0) {
        return Err(FlowError::InvalidArgument(format!("need h > 0 and t >= 0 (h={h}, t={t})")));
    }
    let mut x = x0.to_vec();
    if t == 0.0 {
        return Ok(x);
    }
    let ratio = t / h;
    let intervals = if (ratio - ratio.round()).abs() <= 1e-12 * ratio.max(1.0) {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    }
    .max(1);
    if states.len() < intervals {
        return Err(FlowError::SequenceTooShort { got: states.len(), needed: intervals });
    }
    for &s in &states[..intervals - 1] {
        flow_map_in_place(fields, &mut x, s, h, settings)?;
    }
    let rest = t - (intervals - 1) as f64 * h;
    flow_map_in_place(fields, &mut x, states[intervals - 1], rest.max(0.0), settings)?;
    Ok(x)
}

/// Jacobian of `f(·, s)` at `x` by central
/// differences with relative step 1e-6.
pub fn jacobian(fields: &VectorFieldFamily, x: &[f64], s: usize) -> Vec<Vec<f64>> {
    let d = fields.dim();
    let mut jac = vec![vec![0.0; d]; d];
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for c in 0..d {
        let delta = 1e-6 * x[c].abs().max(1.0);
        xp[c] = x[c] + delta;
        fields.eval_into(&xp, s, &mut fp);
        xp[c] = x[c] - delta;
        fields.eval_into(&xp, s, &mut fm);
        xp[c] = x[c];
        for r in 0..d {
            jac[r][c] = (fp[r] - fm[r]) / (2.0 * delta);
        }
    }
    jac
}

/// Solves `a · v = b` by Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut v = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * v[c]).sum();
        v[r] = (b[r] - s) / a[r][r];
    }
    v.iter().all(|x| x.is_finite()).then_some(v)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Outcome of [`find_fixed_points`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSearch {
    /// Converged, deduplicated roots in seed order.
    pub roots: Vec<Vec<f64>>,
    /// Indices of seeds whose Newton iteration did not converge.
    pub failed_seeds: Vec<usize>,
}

pub const NEWTON_MAX_ITERS: usize = 100;
const DEDUP_RADIUS: f64 = 1e-6;

/// Newton iteration on `f(·, s) = 0` from each seed.
pub fn find_fixed_points(fields: &VectorFieldFamily, s: usize, seeds: &[Vec<f64>], tol: f64) -> FixedPointSearch {
    let mut roots: Vec<Vec<f64>> = Vec::new();
    let mut failed_seeds = Vec::new();
    for (idx, seed) in seeds.iter().enumerate() {
        match newton(fields, s, seed, tol) {
            Some(root) => {
                if !roots
                    .iter()
                    .any(|r| r.iter().zip(&root).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < DEDUP_RADIUS)
                {
                    roots.push(root);
                }
            }
            None => failed_seeds.push(idx),
        }
    }
    FixedPointSearch { roots, failed_seeds }
}

fn newton(fields: &VectorFieldFamily, s: usize, seed: &[f64], tol: f64) -> Option<Vec<f64>> {
    let mut x = seed.to_vec();
    for _ in 0..NEWTON_MAX_ITERS {
        let fx = fields.eval(&x, s);
        if !fx.iter().all(|v| v.is_finite()) {
            return None;
        }
        if norm(&fx) < tol {
            return Some(x);
        }
        let dx = solve_linear(jacobian(fields, &x, s), fx.iter().map(|v| -v).collect())?;
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
    }
    let fx = fields.eval(&x, s);
    (norm(&fx) < tol).then_some(x)
}

/// Linear stability type of an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointKind {
    Sink,
    Source,
    Saddle,
    /// An eigenvalue with (numerically) zero real part.
    NonHyperbolic,
    /// Dimension above 2 is not classified.
    Unclassified,
}

/// Classifies an equilibrium from the signs of the Jacobian eigenvalues'
/// real parts (1-D and 2-D only).
pub fn classify_fixed_point(fields: &VectorFieldFamily, s: usize, x: &[f64]) -> FixedPointKind {
    const EPS: f64 = 1e-9;
    let j = jacobian(fields, x, s);
    match fields.dim() {
        1 => {
            let l = j[0][0];
            if l < -EPS {
                FixedPointKind::Sink
            } else if l > EPS {
                FixedPointKind::Source
            } else {
                FixedPointKind::NonHyperbolic
            }
        }
        2 => {
            let tr = j[0][0] + j[1][1];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det < -EPS {
                FixedPointKind::Saddle
            } else if det.abs() <= EPS || tr.abs() <= EPS {
                FixedPointKind::NonHyperbolic
            } else if tr < 0.0 {
                FixedPointKind::Sink
            } else {
                FixedPointKind::Source
            }
        }
        _ => FixedPointKind::Unclassified,
    }
}
