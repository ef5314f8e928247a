//! Occupancy estimates of stochastic limit sets and hitting experiments for
//! the 1-D linear system.

use rayon::prelude::*;

use crate::grid::Grid;
use crate::hybrid::{HybridState, HybridSystemSpec, HybridWalker};
use crate::markov::TransitionMatrix;
use crate::rng::CounterRng;
use crate::systems::LINEAR_1D_STATES;
use crate::Error;

pub const DEFAULT_REVISIT_THRESHOLD: u64 = 3;

/// Visit counts per cell, plus counts of visit epochs.
///
/// A visit opens a new epoch when at least `h` has passed since the start
/// of the cell's previous epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    grid: Grid,
    h: f64,
    visits: Vec<u64>,
    epochs: Vec<u64>,
    epoch_start: Vec<f64>,
    outside: u64,
}

impl OccupancyGrid {
    pub fn new(grid: Grid, h: f64) -> Self {
        let n = grid.cell_count();
        Self { grid, h, visits: vec![0; n], epochs: vec![0; n], epoch_start: vec![f64::NEG_INFINITY; n], outside: 0 }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    pub fn epochs(&self) -> &[u64] {
        &self.epochs
    }

    /// Samples that fell outside the box.
    pub fn outside(&self) -> u64 {
        self.outside
    }

    /// Records the sample `x` taken at time `t`. Times must not decrease.
    pub fn record(&mut self, t: f64, x: &[f64]) {
        let Some(c) = self.grid.locate(x) else {
            self.outside += 1;
            return;
        };
        self.visits[c] += 1;
        if t - self.epoch_start[c] >= self.h {
            self.epochs[c] += 1;
            self.epoch_start[c] = t;
        }
    }

    /// Adds the counts of another grid over the same box.
    pub fn merge(&mut self, other: &OccupancyGrid) -> Result<(), Error> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("occupancy grids differ".into()));
        }
        for c in 0..self.visits.len() {
            self.visits[c] += other.visits[c];
            self.epochs[c] += other.epochs[c];
            self.epoch_start[c] = self.epoch_start[c].max(other.epoch_start[c]);
        }
        self.outside += other.outside;
        Ok(())
    }

    /// Cells with at least `threshold` epochs, ascending.
    pub fn recurrent_cells(&self, threshold: u64) -> Vec<usize> {
        (0..self.epochs.len()).filter(|&c| self.epochs[c] >= threshold.max(1)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitSetParams {
    pub t_total: f64,
    /// Continuous-time sampling step; at most `h / 50`.
    pub sample_dt: f64,
    pub burn_in: f64,
    pub revisit_threshold: u64,
    pub seed: u64,
}

/// Estimated limit set: recurrent cells of the system's domain grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSet {
    pub grid: Grid,
    pub cells: Vec<usize>,
    pub occupancy: OccupancyGrid,
}

impl LimitSet {
    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.grid.locate(x).is_some_and(|c| self.cells.binary_search(&c).is_ok())
    }
}

/// Runs one path from `y0` and keeps the cells revisited in at least
/// `revisit_threshold` distinct epochs after `burn_in`.
pub fn estimate_limit_set(spec: &HybridSystemSpec, y0: &HybridState, p: LimitSetParams) -> Result<LimitSet, Error> {
    let h = spec.period();
    if !(p.burn_in >= 0.0 && p.t_total > p.burn_in && p.t_total.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= burn_in < t_total (got {} and {})",
            p.burn_in, p.t_total
        )));
    }
    if !(p.sample_dt > 0.0 && p.sample_dt <= h / 50.0 * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("sample_dt {} must lie in (0, h/50]", p.sample_dt)));
    }
    if p.revisit_threshold == 0 {
        return Err(Error::InvalidArgument("revisit_threshold must be at least 1".into()));
    }
    let grid = spec.domain().clone();
    let mut occ = OccupancyGrid::new(grid.clone(), h);
    let mut walker = HybridWalker::new(spec, y0, 0.0, p.seed, 0)?;
    let count = ((p.t_total - p.burn_in) / p.sample_dt + 1e-9).floor() as u64;
    for k in 0..=count {
        let t = p.burn_in + k as f64 * p.sample_dt;
        walker.advance_to(t)?;
        occ.record(t, walker.position());
    }
    Ok(LimitSet { cells: occ.recurrent_cells(p.revisit_threshold), grid, occupancy: occ })
}

fn check_linear_pair(q: &TransitionMatrix) -> Result<(), Error> {
    if q.size() != 2 {
        return Err(Error::InvalidArgument(format!("hitting bound needs a 2-state chain, got {}", q.size())));
    }
    Ok(())
}

/// Periods `k` needed to fall from 1 to `x_star` under `Z = −1` with period
/// 1, and the probability of `k` consecutive such periods.
///
/// State index 0 is `Z = +1` and index 1 is `Z = −1`.
pub fn hitting_bound(q: &TransitionMatrix, x_star: f64, z0: usize) -> Result<(u64, f64), Error> {
    hitting_bound_for_period(q, 1.0, x_star, z0)
}

/// [`hitting_bound`] for switching period `h`.
pub fn hitting_bound_for_period(q: &TransitionMatrix, h: f64, x_star: f64, z0: usize) -> Result<(u64, f64), Error> {
    check_linear_pair(q)?;
    if !(x_star > -1.0 && x_star < 1.0) {
        return Err(Error::DomainError(format!("x_star {x_star} must lie in (-1, 1)")));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("period {h} must be positive")));
    }
    let crossing = (2.0 / (x_star + 1.0)).ln();
    let k = ((crossing / h) * (1.0 - 1e-14)).ceil().max(1.0) as u64;
    let stay = q.prob(1, 1);
    let p = match z0 {
        0 => q.prob(0, 1) * stay.powi(k as i32 - 1),
        1 => stay.powi(k as i32),
        _ => return Err(Error::InvalidArgument(format!("state {z0} out of range"))),
    };
    Ok((k, p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingReport {
    pub k: u64,
    pub p_lower: f64,
    pub m: u64,
    pub hits: u64,
    pub trials: u64,
    pub rate: f64,
    /// `1 − (1 − p_lower)^m`.
    pub bound: f64,
    /// Binomial standard error at the bound.
    pub std_err: f64,
}

impl HittingReport {
    /// True when the rate is no more than four standard errors below the bound.
    pub fn passes(&self) -> bool {
        self.rate >= self.bound - 4.0 * self.std_err
    }
}

const HITTING_CHUNK: u64 = 1024;

/// Fraction of paths from `(x0, z0)` that reach `x_star` within `m k`
/// periods.
///
/// `z0` is the chain state before the first switch, which happens at time
/// 0; period `n` uses the `n`-th draw of stream `trial`.
pub fn hitting_experiment(
    spec: &HybridSystemSpec,
    x0: f64,
    z0: usize,
    x_star: f64,
    m: u64,
    trials: u64,
    seed: u64,
) -> Result<HittingReport, Error> {
    let values = spec.fields().state_values();
    if spec.dim() != 1 || values != LINEAR_1D_STATES {
        return Err(Error::InvalidArgument("hitting experiments need the 1-D linear system".into()));
    }
    if m == 0 || trials == 0 {
        return Err(Error::InvalidArgument("m and trials must be positive".into()));
    }
    if !x0.is_finite() {
        return Err(Error::InvalidArgument(format!("x0 {x0} is not finite")));
    }
    let h = spec.period();
    let (k, p_lower) = hitting_bound_for_period(spec.transition(), h, x_star, z0)?;
    let periods = m * k;
    let q = spec.transition();

    let trial = |t: u64| -> Result<bool, Error> {
        let rng = CounterRng::new(seed, t);
        let mut x = [x0];
        let mut state = z0;
        for n in 0..periods {
            state = q.sample_next(state, rng.uniform_at(n))?;
            let a = x[0];
            spec.flow_in_place(&mut x, state, h)?;
            if (a - x_star) * (x[0] - x_star) <= 0.0 {
                return Ok(true);
            }
        }
        Ok(false)
    };
    let chunks = trials.div_ceil(HITTING_CHUNK);
    let hits = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * HITTING_CHUNK).min(trials);
            let mut hits = 0u64;
            for t in c * HITTING_CHUNK..end {
                hits += u64::from(trial(t)?);
            }
            Ok(hits)
        })
        .collect::<Result<Vec<u64>, Error>>()?
        .into_iter()
        .sum::<u64>();

    let bound = 1.0 - (1.0 - p_lower).powi(m as i32);
    let n = trials as f64;
    Ok(HittingReport {
        k,
        p_lower,
        m,
        hits,
        trials,
        rate: hits as f64 / n,
        bound,
        std_err: (bound * (1.0 - bound) / n).sqrt(),
    })
}
