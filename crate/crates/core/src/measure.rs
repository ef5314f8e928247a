//! Histogram measures on `M × S`.
//!
//! A [`GridMeasure`] holds one sheet of cell weights per chain state plus an
//! overflow bin for mass outside the box, and remembers the phase `t0` it
//! describes. Measures are estimated from long trajectories sampled at
//! `t0 + k h` and transported by [`pushforward`], which moves each cell's
//! weight from the cell center along every branch of the switching chain
//! (an Ulam-type transfer).
//!
//! The cell-center transfer is biased for measures that are not smooth at
//! the cell scale, and the invariant measures here are singular. Invariance
//! checks therefore transport at a refined resolution and compare after
//! merging back to the reporting grid; see [`invariance_defect`].

use rayon::prelude::*;

use crate::grid::Grid;
use crate::hybrid::{HybridState, HybridSystemSpec, HybridWalker};
use crate::Error;

/// Mass conservation tolerance for measure constructors.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Sub-cells per axis used by the transfer in [`estimate_invariant_family`].
pub fn default_transfer_refinement(dim: usize) -> usize {
    match dim {
        1 => 16,
        2 => 4,
        _ => 1,
    }
}

/// Anything stored as layers of cell weights plus overflow.
pub trait BinnedMass {
    fn grid(&self) -> &Grid;
    fn layers(&self) -> usize;
    /// Layer-major weights: `weights[layer * cells + cell]`.
    fn weights(&self) -> &[f64];
    fn overflow(&self) -> f64;

    fn total_mass(&self) -> f64 {
        self.weights().iter().sum::<f64>() + self.overflow()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Grid,
    n_states: usize,
    h: f64,
    phase: f64,
    weights: Vec<f64>,
    overflow: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMeasure {
    grid: Grid,
    h: f64,
    phase: f64,
    weights: Vec<f64>,
    overflow: f64,
}

fn check_mass(weights: &[f64], overflow: f64) -> Result<(), Error> {
    if let Some(w) = weights.iter().chain(std::iter::once(&overflow)).find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight {w} is not a nonnegative number")));
    }
    let total: f64 = weights.iter().sum::<f64>() + overflow;
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidArgument(format!("total mass {total} is not 1")));
    }
    Ok(())
}

impl GridMeasure {
    pub fn new(
        grid: Grid,
        n_states: usize,
        h: f64,
        phase: f64,
        weights: Vec<f64>,
        overflow: f64,
    ) -> Result<Self, Error> {
        if n_states == 0 || weights.len() != n_states * grid.cell_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weights for {n_states} states, got {}",
                n_states * grid.cell_count(),
                weights.len()
            )));
        }
        if !(h > 0.0) || !(0.0..h).contains(&phase) {
            return Err(Error::InvalidArgument(format!("phase {phase} outside [0, {h})")));
        }
        check_mass(&weights, overflow)?;
        Ok(Self { grid, n_states, h, phase, weights, overflow })
    }

    /// Unit mass at `y`.
    pub fn point_mass(grid: Grid, n_states: usize, h: f64, phase: f64, y: &HybridState) -> Result<Self, Error> {
        let mut weights = vec![0.0; n_states * grid.cell_count()];
        let mut overflow = 0.0;
        if y.state >= n_states {
            return Err(Error::InvalidArgument(format!("state {} out of range", y.state)));
        }
        match grid.locate(&y.x) {
            Some(c) => weights[y.state * grid.cell_count() + c] = 1.0,
            None => overflow = 1.0,
        }
        Self::new(grid, n_states, h, phase, weights, overflow)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn period(&self) -> f64 {
        self.h
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn sheet(&self, state: usize) -> &[f64] {
        let n = self.grid.cell_count();
        &self.weights[state * n..(state + 1) * n]
    }

    pub fn sheet_mass(&self, state: usize) -> f64 {
        self.sheet(state).iter().sum()
    }

    /// Merges `factor` cells per axis.
    pub fn coarsen(&self, factor: usize) -> Result<Self, Error> {
        let coarse = self.grid.coarsened(factor)?;
        let (nf, nc) = (self.grid.cell_count(), coarse.cell_count());
        let parents: Vec<usize> = (0..nf).map(|c| self.grid.parent_cell(c, &coarse, factor)).collect();
        let mut weights = vec![0.0; self.n_states * nc];
        for s in 0..self.n_states {
            for (c, &p) in parents.iter().enumerate() {
                weights[s * nc + p] += self.weights[s * nf + c];
            }
        }
        Ok(Self { grid: coarse, weights, ..self.clone() })
    }
}

impl BinnedMass for GridMeasure {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn layers(&self) -> usize {
        self.n_states
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
    fn overflow(&self) -> f64 {
        self.overflow
    }
}

impl MarginalMeasure {
    pub fn period(&self) -> f64 {
        self.h
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }
}

impl BinnedMass for MarginalMeasure {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn layers(&self) -> usize {
        1
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
    fn overflow(&self) -> f64 {
        self.overflow
    }
}

/// Position measure: sheets summed over states.
pub fn marginalize(mu: &GridMeasure) -> MarginalMeasure {
    let n = mu.grid.cell_count();
    let mut weights = vec![0.0; n];
    for s in 0..mu.n_states {
        for (w, v) in weights.iter_mut().zip(mu.sheet(s)) {
            *w += v;
        }
    }
    MarginalMeasure { grid: mu.grid.clone(), h: mu.h, phase: mu.phase, weights, overflow: mu.overflow }
}

/// `½ Σ |a − b|` over every cell, layer and the overflow bin.
pub fn total_variation<M: BinnedMass>(a: &M, b: &M) -> Result<f64, Error> {
    if a.grid() != b.grid() || a.layers() != b.layers() {
        return Err(Error::GridMismatch(format!(
            "{:?} x {} layers vs {:?} x {} layers",
            a.grid().bins(),
            a.layers(),
            b.grid().bins(),
            b.layers()
        )));
    }
    let cells: f64 = a.weights().iter().zip(b.weights()).map(|(x, y)| (x - y).abs()).sum();
    let tv = 0.5 * (cells + (a.overflow() - b.overflow()).abs());
    Ok(tv.clamp(0.0, 1.0))
}

/// Trajectory sampling controls for empirical measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingParams {
    /// Switching periods discarded before the first sample.
    pub burn_in: usize,
    /// Samples per phase.
    pub n_samples: usize,
    pub seed: u64,
}

/// Empirical measures at several phases from one shared trajectory.
///
/// The path starts at `y0` at phase 0; after `burn_in` periods, phase `t0`
/// is sampled at times `(burn_in + k) h + t0` for `k = 1..=n_samples`.
pub fn phase_family(
    spec: &HybridSystemSpec,
    y0: &HybridState,
    phases: &[f64],
    params: SamplingParams,
    grid: &Grid,
) -> Result<Vec<GridMeasure>, Error> {
    if params.n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if phases.is_empty() {
        return Err(Error::InvalidArgument("no phases requested".into()));
    }
    for &p in phases {
        spec.check_phase(p)?;
    }
    if grid.dim() != spec.dim() {
        return Err(Error::GridMismatch(format!(
            "grid is {}-dimensional, system is {}-dimensional",
            grid.dim(),
            spec.dim()
        )));
    }
    let h = spec.period();
    let ns = spec.state_count();
    let nc = grid.cell_count();
    let mut order: Vec<usize> = (0..phases.len()).collect();
    order.sort_by(|&a, &b| phases[a].total_cmp(&phases[b]));

    let mut counts = vec![vec![0u64; ns * nc]; phases.len()];
    let mut overflow = vec![0u64; phases.len()];
    let mut walker = HybridWalker::new(spec, y0, 0.0, params.seed, 0)?;
    for k in 1..=params.n_samples {
        let base = (params.burn_in + k) as f64 * h;
        for &p in &order {
            walker.advance_to(base + phases[p])?;
            match grid.locate(walker.position()) {
                Some(c) => counts[p][walker.state() * nc + c] += 1,
                None => overflow[p] += 1,
            }
        }
    }
    let n = params.n_samples as f64;
    phases
        .iter()
        .enumerate()
        .map(|(p, &t0)| {
            let weights = counts[p].iter().map(|&c| c as f64 / n).collect();
            GridMeasure::new(grid.clone(), ns, h, t0, weights, overflow[p] as f64 / n)
        })
        .collect()
}

/// Empirical measure at a single phase; see [`phase_family`].
pub fn empirical_measure(
    spec: &HybridSystemSpec,
    y0: &HybridState,
    t0: f64,
    params: SamplingParams,
    grid: &Grid,
) -> Result<GridMeasure, Error> {
    Ok(phase_family(spec, y0, &[t0], params, grid)?.remove(0))
}

/// `(target slot or overflow, probability)` for one source slot.
type Row = Vec<(Option<usize>, f64)>;

/// Lazily built transfer operator advancing cell centers by `duration`
/// (`0 < duration ≤ h`) from `phase`.
struct Transfer<'a> {
    spec: &'a HybridSystemSpec,
    grid: &'a Grid,
    phase: f64,
    duration: f64,
    rows: Vec<Option<Row>>,
}

impl<'a> Transfer<'a> {
    fn new(spec: &'a HybridSystemSpec, grid: &'a Grid, phase: f64, duration: f64) -> Self {
        let slots = spec.state_count() * grid.cell_count();
        Self { spec, grid, phase, duration, rows: vec![None; slots] }
    }

    fn crosses_switch(&self) -> bool {
        let h = self.spec.period();
        self.phase + self.duration >= h * (1.0 - 1e-12)
    }

    fn row(&self, slot: usize) -> Result<Row, Error> {
        let nc = self.grid.cell_count();
        let (s, c) = (slot / nc, slot % nc);
        let mut x = self.grid.center(c);
        let target = |x: &[f64], j: usize| self.grid.locate(x).map(|t| j * nc + t);
        if !self.crosses_switch() {
            self.spec.flow_in_place(&mut x, s, self.duration)?;
            return Ok(vec![(target(&x, s), 1.0)]);
        }
        let h = self.spec.period();
        self.spec.flow_in_place(&mut x, s, h - self.phase)?;
        let rest = (self.phase + self.duration - h).max(0.0);
        let mut row = Vec::with_capacity(self.spec.state_count());
        for (j, p) in self.spec.transition().successors(s) {
            let mut xj = x.clone();
            if rest > 0.0 {
                self.spec.flow_in_place(&mut xj, j, rest)?;
            }
            row.push((target(&xj, j), p));
        }
        Ok(row)
    }

    fn apply(&mut self, weights: &[f64], overflow: f64) -> Result<(Vec<f64>, f64), Error> {
        let missing: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0 && self.rows[i].is_none()).collect();
        let built: Vec<Row> = missing.par_iter().map(|&i| self.row(i)).collect::<Result<_, _>>()?;
        for (i, row) in missing.into_iter().zip(built) {
            self.rows[i] = Some(row);
        }
        let mut out = vec![0.0; weights.len()];
        let mut out_overflow = overflow;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(t, p) in self.rows[i].as_ref().expect("row built above") {
                match t {
                    Some(t) => out[t] += w * p,
                    None => out_overflow += w * p,
                }
            }
        }
        Ok((out, out_overflow))
    }
}

/// Transports `mu` forward by time `t`.
///
/// `t = m h + r` with `0 ≤ r < h`: `m` full transfer steps of the embedded
/// chain at the measure's phase, then one partial step of length `r`, which
/// branches over the chain if it reaches the next switch. The result has
/// phase `(t0 + r) mod h`. Mass leaving the box is added to the overflow bin
/// and stays there.
pub fn pushforward(spec: &HybridSystemSpec, mu: &GridMeasure, t: f64) -> Result<GridMeasure, Error> {
    let h = spec.period();
    if mu.n_states != spec.state_count() || mu.grid.dim() != spec.dim() {
        return Err(Error::GridMismatch(format!(
            "measure has {} states on a {}-d grid, system has {} states in {} dimensions",
            mu.n_states,
            mu.grid.dim(),
            spec.state_count(),
            spec.dim()
        )));
    }
    if (mu.h - h).abs() > 1e-12 * h {
        return Err(Error::InvalidArgument(format!("measure period {} differs from system period {h}", mu.h)));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
    }
    let ratio = t / h;
    let (m, r) = if (ratio - ratio.round()).abs() <= 1e-12 * ratio.max(1.0) {
        (ratio.round() as usize, 0.0)
    } else {
        let m = ratio.floor();
        (m as usize, (t - m * h).max(0.0))
    };

    let mut weights = mu.weights.clone();
    let mut overflow = mu.overflow;
    if m > 0 {
        let mut step = Transfer::new(spec, &mu.grid, mu.phase, h);
        for _ in 0..m {
            (weights, overflow) = step.apply(&weights, overflow)?;
        }
    }
    let mut phase = mu.phase;
    if r > 0.0 {
        let mut step = Transfer::new(spec, &mu.grid, mu.phase, r);
        (weights, overflow) = step.apply(&weights, overflow)?;
        phase += r;
        if phase >= h * (1.0 - 1e-12) {
            phase = (phase - h).max(0.0);
        }
    }
    Ok(GridMeasure { grid: mu.grid.clone(), n_states: mu.n_states, h, phase, weights, overflow })
}

/// Total variation between `mu` and its one-period push-forward, both
/// merged by `refine` cells per axis before comparing. `mu` should live on
/// a grid `refine` times finer than the reporting grid.
pub fn invariance_defect(spec: &HybridSystemSpec, mu: &GridMeasure, refine: usize) -> Result<f64, Error> {
    let pushed = pushforward(spec, mu, spec.period())?;
    total_variation(&pushed.coarsen(refine)?, &mu.coarsen(refine)?)
}

/// An estimated phase-indexed measure on the reporting grid, with its
/// invariance defect under one switching period.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEstimate {
    pub measure: GridMeasure,
    pub invariance_tv: f64,
}

/// Estimates the invariant measure at each phase on `grid`, sampling and
/// transporting on a `refine`-times finer grid.
pub fn estimate_invariant_family(
    spec: &HybridSystemSpec,
    y0: &HybridState,
    phases: &[f64],
    params: SamplingParams,
    grid: &Grid,
    refine: usize,
) -> Result<Vec<PhaseEstimate>, Error> {
    let fine = grid.refined(refine)?;
    let family = phase_family(spec, y0, phases, params, &fine)?;
    family
        .iter()
        .map(|mu| {
            Ok(PhaseEstimate { measure: mu.coarsen(refine)?, invariance_tv: invariance_defect(spec, mu, refine)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::embedded_step;
    use crate::markov::TransitionMatrix;
    use crate::systems::{build_linear_1d, reference_linear_transition};
    use proptest::prelude::*;

    fn spec_q1() -> HybridSystemSpec {
        build_linear_1d(reference_linear_transition(), 1.0).unwrap()
    }

    fn grid1(bins: usize) -> Grid {
        Grid::new(vec![-3.0], vec![3.0], vec![bins]).unwrap()
    }

    #[test]
    fn deterministic_chain_concentrates_on_attractor() {
        let spec = build_linear_1d(TransitionMatrix::identity(2), 1.0).unwrap();
        let params = SamplingParams { burn_in: 60, n_samples: 500, seed: 1 };
        let g = grid1(200);
        let mu = empirical_measure(&spec, &HybridState::new(vec![2.0], 0), 0.0, params, &g).unwrap();
        let cell = g.locate(&[1.0]).unwrap();
        assert!((mu.sheet(0)[cell] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_is_an_atom() {
        let spec = spec_q1();
        let params = SamplingParams { burn_in: 0, n_samples: 1, seed: 9 };
        let mu = empirical_measure(&spec, &HybridState::new(vec![0.0], 0), 0.5, params, &grid1(50)).unwrap();
        assert!((mu.total_mass() - 1.0).abs() < 1e-15);
        assert_eq!(mu.weights().iter().filter(|w| **w > 0.0).count(), 1);
    }

    #[test]
    fn q1_sheets_and_gap_at_integer_times() {
        let spec = spec_q1();
        let g = grid1(200);
        let params = SamplingParams { burn_in: 1000, n_samples: 200_000, seed: 5 };
        let mu = empirical_measure(&spec, &HybridState::new(vec![2.0], 0), 0.0, params, &g).unwrap();
        assert!((mu.sheet_mass(0) - 5.0 / 11.0).abs() < 0.01);
        assert!((mu.sheet_mass(1) - 6.0 / 11.0).abs() < 0.01);
        let edge = 1.0 - 2.0 * (-1.0f64).exp();
        let m = marginalize(&mu);
        for c in 0..g.cell_count() {
            let (lo, hi) = g.cell_bounds(c);
            if lo[0] > -edge && hi[0] < edge {
                assert_eq!(m.weights()[c], 0.0, "cell {c} in the gap");
            }
            if hi[0] < -1.0 || lo[0] > 1.0 {
                assert_eq!(m.weights()[c], 0.0, "cell {c} outside [-1, 1]");
            }
        }
    }

    #[test]
    fn marginal_examples() {
        let g = grid1(4);
        let mu = GridMeasure::new(g.clone(), 2, 1.0, 0.0, vec![0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(marginalize(&mu).weights(), mu.sheet(0));
        let mu = GridMeasure::new(g, 2, 1.0, 0.0, vec![0.125; 8], 0.0).unwrap();
        let m = marginalize(&mu);
        assert_eq!(m.weights(), &[0.25; 4]);
        assert!((m.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tv_examples() {
        let g = grid1(2);
        let a = GridMeasure::new(g.clone(), 1, 1.0, 0.0, vec![0.5, 0.5], 0.0).unwrap();
        let b = GridMeasure::new(g.clone(), 1, 1.0, 0.0, vec![1.0, 0.0], 0.0).unwrap();
        let c = GridMeasure::new(g.clone(), 1, 1.0, 0.0, vec![0.0, 1.0], 0.0).unwrap();
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        assert_eq!(total_variation(&b, &c).unwrap(), 1.0);
        assert_eq!(total_variation(&a, &b).unwrap(), 0.5);
        let other = GridMeasure::new(grid1(1), 1, 1.0, 0.0, vec![1.0], 0.0).unwrap();
        assert!(matches!(total_variation(&a, &other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn constructor_rejects_bad_mass() {
        assert!(GridMeasure::new(grid1(2), 1, 1.0, 0.0, vec![0.5, 0.4], 0.0).is_err());
        assert!(GridMeasure::new(grid1(2), 1, 1.0, 0.0, vec![1.5, -0.5], 0.0).is_err());
        assert!(GridMeasure::new(grid1(2), 1, 1.0, 1.0, vec![0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn pushforward_zero_is_identity() {
        let spec = spec_q1();
        let mu = GridMeasure::point_mass(grid1(100), 2, 1.0, 0.3, &HybridState::new(vec![0.2], 1)).unwrap();
        assert_eq!(pushforward(&spec, &mu, 0.0).unwrap(), mu);
    }

    #[test]
    fn pushforward_point_mass_one_period() {
        let spec = spec_q1();
        let g = grid1(200);
        for t0 in [0.0, 0.35] {
            let c = g.locate(&[0.4]).unwrap();
            let y = HybridState::new(g.center(c), 0);
            let mu = GridMeasure::point_mass(g.clone(), 2, 1.0, t0, &y).unwrap();
            let out = pushforward(&spec, &mu, 1.0).unwrap();
            assert_eq!(out.phase(), t0);
            let mut expect = vec![0.0; 400];
            for (z, p) in embedded_step(&spec, &y, t0).unwrap() {
                expect[z.state * 200 + g.locate(&z.x).unwrap()] += p;
            }
            assert_eq!(out.weights(), &expect[..]);
        }
    }

    #[test]
    fn pushforward_fraction_without_switch_is_deterministic() {
        let spec = spec_q1();
        let g = grid1(600);
        let y = HybridState::new(g.center(g.locate(&[0.5]).unwrap()), 1);
        let mu = GridMeasure::point_mass(g.clone(), 2, 1.0, 0.0, &y).unwrap();
        let out = pushforward(&spec, &mu, 0.25).unwrap();
        assert!((out.phase() - 0.25).abs() < 1e-15);
        let x = -1.0 + (y.x[0] + 1.0) * (-0.25f64).exp();
        assert_eq!(out.sheet(1)[g.locate(&[x]).unwrap()], 1.0);
    }

    #[test]
    fn pushforward_fraction_across_switch_branches() {
        let spec = spec_q1();
        let g = grid1(600);
        let y = HybridState::new(g.center(g.locate(&[0.5]).unwrap()), 1);
        let mu = GridMeasure::point_mass(g.clone(), 2, 1.0, 0.75, &y).unwrap();
        let out = pushforward(&spec, &mu, 0.5).unwrap();
        assert!((out.phase() - 0.25).abs() < 1e-15);
        assert!((out.sheet_mass(0) - 0.5).abs() < 1e-15);
        assert!((out.sheet_mass(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn overflow_collects_escaping_mass() {
        let spec = spec_q1();
        let g = Grid::new(vec![-0.5], vec![0.5], vec![10]).unwrap();
        let mu = GridMeasure::point_mass(g, 2, 1.0, 0.0, &HybridState::new(vec![0.45], 0)).unwrap();
        let out = pushforward(&spec, &mu, 3.0).unwrap();
        assert!(out.overflow() > 0.0);
        assert!((out.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integer_period_composition_is_exact() {
        let spec = spec_q1();
        let g = grid1(100);
        let mu = GridMeasure::new(g.clone(), 2, 1.0, 0.2, vec![1.0 / 200.0; 200], 0.0).unwrap();
        let a = pushforward(&spec, &pushforward(&spec, &mu, 2.0).unwrap(), 1.0).unwrap();
        let b = pushforward(&spec, &mu, 3.0).unwrap();
        assert!(total_variation(&a, &b).unwrap() < 1e-6);
    }

    #[test]
    fn fractional_composition_within_grid_diffusion() {
        let spec = spec_q1();
        let refine = 16;
        let fine = grid1(200).refined(refine).unwrap();
        let params = SamplingParams { burn_in: 100, n_samples: 100_000, seed: 2 };
        let mu = empirical_measure(&spec, &HybridState::new(vec![0.0], 0), 0.1, params, &fine).unwrap();
        for (a, b) in [(0.5, 0.5), (0.3, 1.45), (0.9, 0.2)] {
            let two = pushforward(&spec, &pushforward(&spec, &mu, a).unwrap(), b).unwrap();
            let one = pushforward(&spec, &mu, a + b).unwrap();
            assert!((two.phase() - one.phase()).abs() < 1e-12);
            let tv = total_variation(&two.coarsen(refine).unwrap(), &one.coarsen(refine).unwrap()).unwrap();
            assert!(tv < 0.02, "a={a} b={b}: tv {tv}");
        }
    }

    #[test]
    fn phase_family_singleton_matches_empirical() {
        let spec = spec_q1();
        let g = grid1(100);
        let params = SamplingParams { burn_in: 10, n_samples: 2000, seed: 8 };
        let y0 = HybridState::new(vec![2.0], 0);
        let fam = phase_family(&spec, &y0, &[0.0], params, &g).unwrap();
        assert_eq!(fam, vec![empirical_measure(&spec, &y0, 0.0, params, &g).unwrap()]);
        assert!(phase_family(&spec, &y0, &[1.0], params, &g).is_err());
        assert!(phase_family(&spec, &y0, &[-0.1], params, &g).is_err());
    }

    #[test]
    fn phase_family_order_does_not_matter() {
        let spec = spec_q1();
        let g = grid1(100);
        let params = SamplingParams { burn_in: 10, n_samples: 2000, seed: 8 };
        let y0 = HybridState::new(vec![2.0], 0);
        let a = phase_family(&spec, &y0, &[0.0, 0.5, 0.25], params, &g).unwrap();
        let b = phase_family(&spec, &y0, &[0.25, 0.0, 0.5], params, &g).unwrap();
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[2]);
        assert_eq!(a[2], b[0]);
    }

    #[test]
    fn coarsen_preserves_mass_and_sheets() {
        let g = grid1(8);
        let w: Vec<f64> = (0..16).map(|i| i as f64 / 120.0).collect();
        let mu = GridMeasure::new(g, 2, 1.0, 0.0, w, 0.0).unwrap();
        let c = mu.coarsen(4).unwrap();
        assert_eq!(c.grid().bins(), &[2]);
        assert!((c.sheet_mass(1) - mu.sheet_mass(1)).abs() < 1e-15);
        assert!((c.sheet(0)[0] - (0.0 + 1.0 + 2.0 + 3.0) / 120.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pushforward_conserves_mass(
            raw in proptest::collection::vec(0.0f64..1.0, 80),
            t in 0.0f64..10.0,
            phase in 0.0f64..1.0,
        ) {
            let spec = spec_q1();
            let total: f64 = raw.iter().sum::<f64>() + 1e-12;
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let s: f64 = w.iter().sum();
            let mu = GridMeasure::new(grid1(40), 2, 1.0, phase, w, (1.0 - s).max(0.0)).unwrap();
            let out = pushforward(&spec, &mu, t).unwrap();
            prop_assert!((out.total_mass() - mu.total_mass()).abs() < 1e-9);
            prop_assert!((marginalize(&out).total_mass() - 1.0).abs() < 1e-9);
            prop_assert!(out.weights().iter().all(|w| *w >= 0.0));
        }
    }
}
