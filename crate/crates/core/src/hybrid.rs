//! The hybrid process `Y_t = (x_t, Z_t)`.
//!
//! Timing conventions:
//!
//! * The chain switches every `h` time units. A process launched at phase
//!   `t0 ∈ [0, h)` sees its first switch after `h − t0` time units.
//! * At a switch time the reported state is the post-switch state, while the
//!   position is the endpoint of the flow that just finished.
//! * One step of the embedded chain at phase `t0` maps `(x, i)` to
//!   `(φ_j(t0, φ_i(h − t0, x)), j)` with probability `P(i → j)`.

use rayon::prelude::*;

use crate::flow::{flow_map_in_place, IntegratorSettings, VectorFieldFamily};
use crate::grid::Grid;
use crate::markov::TransitionMatrix;
use crate::rng::CounterRng;
use crate::Error;

/// Default cap on spider leaves.
pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

/// Position plus chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub x: Vec<f64>,
    pub state: usize,
}

impl HybridState {
    pub fn new(x: Vec<f64>, state: usize) -> Self {
        Self { x, state }
    }
}

/// A complete hybrid system: fields, switching chain, period, domain and
/// integrator.
#[derive(Debug, Clone)]
pub struct HybridSystemSpec {
    name: String,
    fields: VectorFieldFamily,
    q: TransitionMatrix,
    h: f64,
    domain: Grid,
    integrator: IntegratorSettings,
}

impl HybridSystemSpec {
    /// `domain` doubles as the default histogram grid for the system.
    pub fn new(
        name: impl Into<String>,
        fields: VectorFieldFamily,
        q: TransitionMatrix,
        h: f64,
        domain: Grid,
        integrator: IntegratorSettings,
    ) -> Result<Self, Error> {
        if q.size() != fields.state_count() {
            return Err(Error::InvalidArgument(format!(
                "transition matrix has {} states, vector field family has {}",
                q.size(),
                fields.state_count()
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("switching period {h} must be positive")));
        }
        if domain.dim() != fields.dim() {
            return Err(Error::InvalidArgument(format!(
                "domain is {}-dimensional, fields are {}-dimensional",
                domain.dim(),
                fields.dim()
            )));
        }
        integrator.validate(h)?;
        Ok(Self { name: name.into(), fields, q, h, domain, integrator })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &VectorFieldFamily {
        &self.fields
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.q
    }

    pub fn period(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> &Grid {
        &self.domain
    }

    pub fn integrator(&self) -> &IntegratorSettings {
        &self.integrator
    }

    pub fn dim(&self) -> usize {
        self.fields.dim()
    }

    pub fn state_count(&self) -> usize {
        self.q.size()
    }

    /// Copy with a different switching matrix.
    pub fn with_transition(&self, q: TransitionMatrix) -> Result<Self, Error> {
        Self::new(self.name.clone(), self.fields.clone(), q, self.h, self.domain.clone(), self.integrator)
    }

    /// Copy with a different default grid.
    pub fn with_domain(&self, domain: Grid) -> Result<Self, Error> {
        Self::new(self.name.clone(), self.fields.clone(), self.q.clone(), self.h, domain, self.integrator)
    }

    /// Copy with the analytic flow removed, so every flow goes through RK4.
    pub fn without_analytic_flow(&self) -> Self {
        Self { fields: self.fields.without_analytic_flow(), ..self.clone() }
    }

    pub(crate) fn flow_in_place(&self, x: &mut [f64], s: usize, duration: f64) -> Result<(), Error> {
        flow_map_in_place(&self.fields, x, s, duration, &self.integrator)?;
        Ok(())
    }

    pub(crate) fn check_state(&self, y: &HybridState) -> Result<(), Error> {
        if y.state >= self.state_count() {
            return Err(Error::InvalidArgument(format!(
                "state {} out of range ({} states)",
                y.state,
                self.state_count()
            )));
        }
        if y.x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "position has {} coordinates, system is {}-dimensional",
                y.x.len(),
                self.dim()
            )));
        }
        if !y.x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("position {:?} is not finite", y.x)));
        }
        Ok(())
    }

    pub(crate) fn check_phase(&self, t0: f64) -> Result<(), Error> {
        if !(0.0..self.h).contains(&t0) {
            return Err(Error::InvalidArgument(format!("phase {t0} outside [0, {})", self.h)));
        }
        Ok(())
    }
}

/// A single realization of the hybrid process, advanced on demand.
///
/// Switch `n` (0-based) draws its uniform from `(seed, stream, n)`, so the
/// path is a pure function of its launch data.
#[derive(Debug, Clone)]
pub struct HybridWalker<'a> {
    spec: &'a HybridSystemSpec,
    x: Vec<f64>,
    state: usize,
    elapsed: f64,
    launch_phase: f64,
    switches: u64,
    rng: CounterRng,
}

impl<'a> HybridWalker<'a> {
    pub fn new(
        spec: &'a HybridSystemSpec,
        y0: &HybridState,
        launch_phase: f64,
        seed: u64,
        stream: u64,
    ) -> Result<Self, Error> {
        spec.check_state(y0)?;
        spec.check_phase(launch_phase)?;
        Ok(Self {
            spec,
            x: y0.x.clone(),
            state: y0.state,
            elapsed: 0.0,
            launch_phase,
            switches: 0,
            rng: CounterRng::new(seed, stream),
        })
    }

    /// Time since launch.
    pub fn time(&self) -> f64 {
        self.elapsed
    }

    pub fn position(&self) -> &[f64] {
        &self.x
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn switches(&self) -> u64 {
        self.switches
    }

    pub fn snapshot(&self) -> HybridState {
        HybridState::new(self.x.clone(), self.state)
    }

    pub fn next_switch_time(&self) -> f64 {
        (self.switches + 1) as f64 * self.spec.h - self.launch_phase
    }

    /// Flows forward to time `t` (since launch), applying every switch whose
    /// time is `≤ t`.
    pub fn advance_to(&mut self, t: f64) -> Result<(), Error> {
        if t < self.elapsed {
            return Err(Error::InvalidArgument(format!("cannot move back from {} to {t}", self.elapsed)));
        }
        loop {
            let ts = self.next_switch_time();
            if ts > t {
                break;
            }
            self.spec.flow_in_place(&mut self.x, self.state, ts - self.elapsed)?;
            self.elapsed = ts;
            self.switch();
        }
        if t > self.elapsed {
            self.spec.flow_in_place(&mut self.x, self.state, t - self.elapsed)?;
            self.elapsed = t;
        }
        Ok(())
    }

    /// Runs until the next switch has been applied.
    pub fn advance_through_switch(&mut self) -> Result<(), Error> {
        let ts = self.next_switch_time();
        self.advance_to(ts)
    }

    fn switch(&mut self) {
        let u = self.rng.uniform_at(self.switches);
        // state < size is an invariant of the walker
        self.state = self.spec.q.sample_next(self.state, u).expect("valid state");
        self.switches += 1;
    }
}

/// Samples of one simulated path at multiples of `sample_dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, HybridState)>,
    pub sample_dt: f64,
    pub seed: u64,
}

impl Trajectory {
    /// True when every state change between consecutive samples has a
    /// multiple of `h` in `(t_prev, t_next]`.
    pub fn switches_only_at_multiples_of(&self, h: f64) -> bool {
        self.samples.windows(2).all(|w| {
            let (t0, a) = &w[0];
            let (t1, b) = &w[1];
            a.state == b.state || ((t0 / h).floor() as i64) < ((t1 / h).floor() as i64)
        })
    }
}

/// One path from `y0` at phase 0, sampled at `k · sample_dt` for
/// `0 ≤ k · sample_dt ≤ t_end`.
pub fn simulate(
    spec: &HybridSystemSpec,
    y0: &HybridState,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
) -> Result<Trajectory, Error> {
    simulate_stream(spec, y0, t_end, sample_dt, seed, 0)
}

/// [`simulate`] on an explicit RNG stream (trajectory index in ensembles).
pub fn simulate_stream(
    spec: &HybridSystemSpec,
    y0: &HybridState,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
    stream: u64,
) -> Result<Trajectory, Error> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end {t_end} must be nonnegative")));
    }
    if !(sample_dt > 0.0 && sample_dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("sample_dt {sample_dt} must be positive")));
    }
    let count = (t_end / sample_dt + 1e-9).floor() as usize + 1;
    let mut walker = HybridWalker::new(spec, y0, 0.0, seed, stream)?;
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 * sample_dt;
        walker.advance_to(t)?;
        samples.push((t, walker.snapshot()));
    }
    Ok(Trajectory { samples, sample_dt, seed })
}

/// The successors of `y` under one step of the embedded chain at phase
/// `t0`, with their probabilities. Zero-probability transitions are
/// omitted, so the result has one entry per positive entry of row
/// `y.state` of `Q`, in state order.
pub fn embedded_step(spec: &HybridSystemSpec, y: &HybridState, t0: f64) -> Result<Vec<(HybridState, f64)>, Error> {
    spec.check_state(y)?;
    spec.check_phase(t0)?;
    embedded_step_unchecked(spec, y, t0)
}

fn embedded_step_unchecked(
    spec: &HybridSystemSpec,
    y: &HybridState,
    t0: f64,
) -> Result<Vec<(HybridState, f64)>, Error> {
    let mut mid = y.x.clone();
    spec.flow_in_place(&mut mid, y.state, spec.h - t0)?;
    let mut out = Vec::with_capacity(spec.state_count());
    for (j, p) in spec.q.successors(y.state) {
        let mut x = mid.clone();
        if t0 > 0.0 {
            spec.flow_in_place(&mut x, j, t0)?;
        }
        out.push((HybridState::new(x, j), p));
    }
    Ok(out)
}

/// Exact number of nonzero-probability branches after `depth` steps from
/// `state`, saturating at `u128::MAX`.
pub fn branch_count(q: &TransitionMatrix, state: usize, depth: usize) -> u128 {
    let n = q.size();
    let mut counts = vec![0u128; n];
    counts[state] = 1;
    for _ in 0..depth {
        let mut next = vec![0u128; n];
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for (j, _) in q.successors(i) {
                next[j] = next[j].saturating_add(c);
            }
        }
        counts = next;
    }
    counts.iter().fold(0u128, |a, &c| a.saturating_add(c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiderNode {
    pub y: HybridState,
    pub probability: f64,
    /// Index into the previous level; `None` for the root.
    pub parent: Option<usize>,
}

/// Every branch of the embedded chain up to a fixed depth.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiderTree {
    pub t0: f64,
    pub levels: Vec<Vec<SpiderNode>>,
}

impl SpiderTree {
    pub fn root(&self) -> &SpiderNode {
        &self.levels[0][0]
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn leaves(&self) -> &[SpiderNode] {
        self.levels.last().expect("tree has a root level")
    }

    pub fn level_probability(&self, level: usize) -> f64 {
        self.levels[level].iter().map(|n| n.probability).sum()
    }
}

fn check_budget(spec: &HybridSystemSpec, y0: &HybridState, depth: usize, max_nodes: usize) -> Result<(), Error> {
    let needed = branch_count(&spec.q, y0.state, depth);
    if needed > max_nodes as u128 {
        return Err(Error::NodeBudgetExceeded { needed, budget: max_nodes });
    }
    Ok(())
}

fn expand(spec: &HybridSystemSpec, level: &[SpiderNode], t0: f64) -> Result<Vec<SpiderNode>, Error> {
    let mut next = Vec::with_capacity(level.len() * spec.state_count());
    for (idx, node) in level.iter().enumerate() {
        for (y, p) in embedded_step_unchecked(spec, &node.y, t0)? {
            next.push(SpiderNode { y, probability: node.probability * p, parent: Some(idx) });
        }
    }
    Ok(next)
}

/// Breadth-first enumeration of all embedded-chain branches from `y0`.
/// Coincident positions are never merged.
pub fn spider(
    spec: &HybridSystemSpec,
    y0: &HybridState,
    t0: f64,
    depth: usize,
    max_nodes: usize,
) -> Result<SpiderTree, Error> {
    spec.check_state(y0)?;
    spec.check_phase(t0)?;
    check_budget(spec, y0, depth, max_nodes)?;
    let mut levels = vec![vec![SpiderNode { y: y0.clone(), probability: 1.0, parent: None }]];
    for _ in 0..depth {
        let next = expand(spec, levels.last().expect("root level"), t0)?;
        levels.push(next);
    }
    Ok(SpiderTree { t0, levels })
}

/// `𝒫_n f(y) = E[f(Y_n) | Y_0 = y]` for the embedded chain at phase `t0`,
/// summed exactly over every branch.
pub fn markov_operator<F>(
    spec: &HybridSystemSpec,
    f: F,
    y: &HybridState,
    n: usize,
    t0: f64,
    max_nodes: usize,
) -> Result<f64, Error>
where
    F: Fn(&HybridState) -> f64,
{
    spec.check_state(y)?;
    spec.check_phase(t0)?;
    check_budget(spec, y, n, max_nodes)?;
    let mut level = vec![SpiderNode { y: y.clone(), probability: 1.0, parent: None }];
    for _ in 0..n {
        level = expand(spec, &level, t0)?;
    }
    Ok(level.iter().map(|node| node.probability * f(&node.y)).sum())
}

/// Monte Carlo mean of `f(Y_n)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trajectories: usize,
}

const ENSEMBLE_CHUNK: usize = 4096;

/// Estimates `𝒫_n f(y)` by simulating `trajectories` independent paths
/// launched at phase `t0` and evaluating `f` at time `n h`. Trajectory `k`
/// uses RNG stream `k`; the reduction order is fixed so the result does
/// not depend on the thread count.
pub fn monte_carlo_operator<F>(
    spec: &HybridSystemSpec,
    f: F,
    y: &HybridState,
    n: usize,
    t0: f64,
    trajectories: usize,
    seed: u64,
) -> Result<MonteCarloEstimate, Error>
where
    F: Fn(&HybridState) -> f64 + Sync,
{
    spec.check_state(y)?;
    spec.check_phase(t0)?;
    if trajectories < 2 {
        return Err(Error::InvalidArgument("need at least two trajectories".into()));
    }
    let t_end = n as f64 * spec.h;
    let chunks: Vec<(f64, f64)> = (0..trajectories.div_ceil(ENSEMBLE_CHUNK))
        .into_par_iter()
        .map(|c| -> Result<(f64, f64), Error> {
            let start = c * ENSEMBLE_CHUNK;
            let end = (start + ENSEMBLE_CHUNK).min(trajectories);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for k in start..end {
                let mut w = HybridWalker::new(spec, y, t0, seed, k as u64)?;
                w.advance_to(t_end)?;
                let v = f(&w.snapshot());
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect::<Result<_, _>>()?;
    let (sum, sum_sq) = chunks.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let m = trajectories as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(MonteCarloEstimate { mean, std_err: (var / m).sqrt(), trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{build_cstr_2d, build_linear_1d, reference_cstr_transition};

    fn q1() -> TransitionMatrix {
        TransitionMatrix::new(&[[0.4, 0.6], [0.5, 0.5]]).unwrap()
    }

    fn linear(q: TransitionMatrix) -> HybridSystemSpec {
        build_linear_1d(q, 1.0).unwrap()
    }

    const E1: f64 = 0.367_879_441_171_442_33; // e^{-1}

    #[test]
    fn deterministic_chain_follows_single_flow() {
        let spec = linear(TransitionMatrix::identity(2));
        let traj = simulate(&spec, &HybridState::new(vec![2.0], 0), 3.0, 0.25, 1).unwrap();
        assert_eq!(traj.samples.len(), 13);
        for (t, y) in &traj.samples {
            assert_eq!(y.state, 0);
            assert!((y.x[0] - (1.0 + (-t).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn t_end_zero_gives_single_sample() {
        let spec = linear(q1());
        let traj = simulate(&spec, &HybridState::new(vec![0.3], 1), 0.0, 0.1, 5).unwrap();
        assert_eq!(traj.samples, vec![(0.0, HybridState::new(vec![0.3], 1))]);
    }

    #[test]
    fn simulate_is_deterministic_and_seed_sensitive() {
        let spec = linear(q1());
        let y0 = HybridState::new(vec![2.0], 0);
        let a = simulate(&spec, &y0, 40.0, 0.1, 42).unwrap();
        let b = simulate(&spec, &y0, 40.0, 0.1, 42).unwrap();
        let c = simulate(&spec, &y0, 40.0, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn states_change_only_at_switch_times() {
        let spec = linear(q1());
        for seed in 0..20 {
            let traj = simulate(&spec, &HybridState::new(vec![2.0], 0), 30.0, 0.07, seed).unwrap();
            assert!(traj.switches_only_at_multiples_of(1.0));
        }
    }

    #[test]
    fn absorbed_into_unit_interval() {
        let spec = linear(q1());
        for seed in 0..50 {
            let traj = simulate(&spec, &HybridState::new(vec![2.0], 0), 60.0, 0.05, seed).unwrap();
            let first = traj.samples.iter().position(|(_, y)| y.x[0].abs() <= 1.0);
            let first = first.expect("trajectory enters [-1, 1]");
            assert!(traj.samples[first..].iter().all(|(_, y)| y.x[0].abs() <= 1.0));
        }
    }

    #[test]
    fn walker_rejects_going_backwards() {
        let spec = linear(q1());
        let mut w = HybridWalker::new(&spec, &HybridState::new(vec![0.0], 0), 0.0, 1, 0).unwrap();
        w.advance_to(2.5).unwrap();
        assert_eq!(w.switches(), 2);
        assert!(w.advance_to(1.0).is_err());
    }

    #[test]
    fn embedded_step_at_phase_zero() {
        let spec = linear(q1());
        let out = embedded_step(&spec, &HybridState::new(vec![-1.0], 0), 0.0).unwrap();
        assert_eq!(out.len(), 2);
        let expect = 1.0 - 2.0 * E1;
        assert!((out[0].0.x[0] - expect).abs() < 1e-15);
        assert_eq!(out[0].0.x, out[1].0.x);
        assert_eq!((out[0].0.state, out[0].1), (0, 0.4));
        assert_eq!((out[1].0.state, out[1].1), (1, 0.6));
        assert!((out[0].0.x[0] - 0.2642).abs() < 1e-4);
    }

    #[test]
    fn embedded_step_at_interior_phase_composes_flows() {
        let spec = linear(q1());
        let t0 = 0.25;
        let out = embedded_step(&spec, &HybridState::new(vec![0.5], 1), t0).unwrap();
        let mid = -1.0 + (0.5 + 1.0) * (-(1.0 - t0)).exp();
        let up = 1.0 + (mid - 1.0) * (-t0).exp();
        let down = -1.0 + (mid + 1.0) * (-t0).exp();
        assert!((out[0].0.x[0] - up).abs() < 1e-14);
        assert!((out[1].0.x[0] - down).abs() < 1e-14);
        assert_eq!(out[0].1 + out[1].1, 1.0);
    }

    #[test]
    fn embedded_step_deterministic_chain_has_one_outcome() {
        let spec = linear(TransitionMatrix::identity(2));
        let out = embedded_step(&spec, &HybridState::new(vec![0.1], 1), 0.5).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].0.state, out[0].1), (1, 1.0));
    }

    #[test]
    fn embedded_step_checks_phase() {
        let spec = linear(q1());
        assert!(embedded_step(&spec, &HybridState::new(vec![0.1], 1), 1.0).is_err());
        assert!(embedded_step(&spec, &HybridState::new(vec![0.1], 2), 0.0).is_err());
    }

    #[test]
    fn spider_depth_zero() {
        let spec = linear(q1());
        let tree = spider(&spec, &HybridState::new(vec![0.0], 0), 0.0, 0, 10).unwrap();
        assert_eq!(tree.levels.len(), 1);
        assert_eq!(tree.root().probability, 1.0);
    }

    #[test]
    fn spider_linear_depth_ten_matches_brute_force() {
        let spec = linear(q1());
        let tree = spider(&spec, &HybridState::new(vec![0.0], 0), 0.0, 10, DEFAULT_NODE_BUDGET).unwrap();
        assert_eq!(tree.leaves().len(), 1024);
        for level in 0..=10 {
            assert!((tree.level_probability(level) - 1.0).abs() < 1e-12);
        }
        // Brute force: enumerate state words directly with the closed-form flow.
        let q = [[0.4, 0.6], [0.5, 0.5]];
        let z = [1.0, -1.0];
        for (leaf_idx, leaf) in tree.leaves().iter().enumerate() {
            // Breadth-first order with successors in state order means the
            // leaf index is the base-2 word of states, most significant first.
            let mut x = 0.0f64;
            let mut s = 0usize;
            let mut p = 1.0;
            for level in (0..10).rev() {
                let next = (leaf_idx >> level) & 1;
                x = z[s] + (x - z[s]) * E1;
                p *= q[s][next];
                s = next;
            }
            assert!((leaf.y.x[0] - x).abs() < 1e-13);
            assert_eq!(leaf.y.state, s);
            assert!((leaf.probability - p).abs() < 1e-15);
            assert!(leaf.y.x[0].abs() <= 1.0);
        }
    }

    #[test]
    fn spider_budget_is_enforced() {
        let spec = linear(q1());
        let err = spider(&spec, &HybridState::new(vec![0.0], 0), 0.0, 11, 1024).unwrap_err();
        assert!(matches!(err, Error::NodeBudgetExceeded { needed: 2048, budget: 1024 }));
        // A deterministic chain never branches.
        let det = linear(TransitionMatrix::identity(2));
        let tree = spider(&det, &HybridState::new(vec![0.0], 0), 0.0, 50, 1).unwrap();
        assert_eq!(tree.leaves().len(), 1);
    }

    #[test]
    fn spider_cstr_probability_conservation() {
        let spec = build_cstr_2d(reference_cstr_transition(), 1.0).unwrap();
        let tree = spider(&spec, &HybridState::new(vec![3.5, 0.75], 1), 0.0, 5, DEFAULT_NODE_BUDGET).unwrap();
        assert_eq!(tree.leaves().len(), 243);
        for level in 0..=5 {
            assert!(tree.levels[level].len() <= 3usize.pow(level as u32));
            assert!((tree.level_probability(level) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embedded_chain_is_time_homogeneous() {
        // The subtree hanging off a level-1 node equals a fresh spider
        // rooted at that node.
        let spec = linear(q1());
        for t0 in [0.0, 0.4] {
            let tree = spider(&spec, &HybridState::new(vec![0.2], 1), t0, 3, 100).unwrap();
            for (idx, node) in tree.levels[1].iter().enumerate() {
                let fresh = spider(&spec, &node.y, t0, 2, 100).unwrap();
                let kids: Vec<&SpiderNode> =
                    tree.levels[2].iter().enumerate().filter(|(_, n)| n.parent == Some(idx)).map(|(_, n)| n).collect();
                assert_eq!(kids.len(), fresh.levels[1].len());
                for (a, b) in kids.iter().zip(&fresh.levels[1]) {
                    assert_eq!(a.y, b.y);
                    assert!((a.probability - node.probability * b.probability).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn walker_agrees_with_spider_branch_at_later_absolute_time() {
        // A walker reaching (y, phase t0) at a late absolute time continues
        // along one of the spider branches rooted at y.
        let spec = linear(q1());
        let t0 = 0.3;
        let mut w = HybridWalker::new(&spec, &HybridState::new(vec![2.0], 0), 0.0, 7, 0).unwrap();
        w.advance_to(17.0 + t0).unwrap();
        let y = w.snapshot();
        let tree = spider(&spec, &y, t0, 1, 10).unwrap();
        w.advance_to(18.0 + t0).unwrap();
        let after = w.snapshot();
        assert!(tree.leaves().iter().any(|n| n.y.state == after.state && (n.y.x[0] - after.x[0]).abs() < 1e-12));
    }

    #[test]
    fn operator_basics() {
        let spec = linear(q1());
        let y = HybridState::new(vec![0.0], 0);
        let one = markov_operator(&spec, |_| 1.0, &y, 6, 0.3, DEFAULT_NODE_BUDGET).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let id = markov_operator(&spec, |s| s.x[0] + 10.0 * s.state as f64, &y, 0, 0.0, 1).unwrap();
        assert_eq!(id, 0.0);
        let v = markov_operator(&spec, |s| s.x[0], &y, 1, 0.0, DEFAULT_NODE_BUDGET).unwrap();
        assert!((v - (1.0 - E1)).abs() < 1e-15);
        assert!((v - 0.6321).abs() < 1e-4);
    }

    #[test]
    fn operator_matches_monte_carlo_small() {
        let spec = linear(q1());
        let y = HybridState::new(vec![0.5], 1);
        let f = |s: &HybridState| s.x[0] + 0.5 * s.state as f64;
        let exact = markov_operator(&spec, f, &y, 4, 0.2, DEFAULT_NODE_BUDGET).unwrap();
        let mc = monte_carlo_operator(&spec, f, &y, 4, 0.2, 50_000, 3).unwrap();
        assert!((mc.mean - exact).abs() < 4.0 * mc.std_err, "{exact} vs {mc:?}");
    }
}
