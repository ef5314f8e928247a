//! Finite-state Markov chains switching the hybrid system.
//!
//! Convention used throughout: distributions are **row vectors** and evolve as
//! `p_{n+1} = p_n · Q`, where `Q[i][j]` is the probability of moving from
//! state `i` to state `j`. Nothing in this crate works with `Qᵀ`.

use thiserror::Error;

/// Row sums may deviate from 1 by this much before validation rejects them.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Iteration cap for [`TransitionMatrix::stationary_distribution`].
pub const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Convergence threshold (L1 change per iteration) for the stationary solver.
pub const STATIONARY_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("transition matrix must be square and non-empty (row {row} has {len} entries, expected {expected})")]
    NonSquare { row: usize, len: usize, expected: usize },
    #[error("transition matrix has no states")]
    Empty,
    #[error("entry ({0}, {1}) is negative")]
    NegativeEntry(usize, usize),
    #[error("entry ({0}, {1}) is not finite")]
    NonFiniteEntry(usize, usize),
    #[error("row {0} sums to {1}, expected 1")]
    RowSumViolation(usize, f64),
    #[error("state index {index} out of range for {size} states")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("distribution has {got} weights, chain has {expected} states")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("stationary iteration did not converge within {0} iterations")]
    NoConvergence(usize),
}

/// Validated row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    entries: Vec<f64>,
}

/// Probability vector over the chain's states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    /// Accepts weights that are nonnegative and sum to 1 within 1e-9; the
    /// stored vector is renormalized.
    pub fn new(weights: Vec<f64>) -> Result<Self, MarkovError> {
        if weights.is_empty() {
            return Err(MarkovError::InvalidDistribution("empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(MarkovError::InvalidDistribution(format!("weight {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(MarkovError::InvalidDistribution(format!("weights sum to {sum}")));
        }
        Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    /// All mass on `state`.
    pub fn point(size: usize, state: usize) -> Self {
        let mut w = vec![0.0; size];
        w[state] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl TransitionMatrix {
    /// Validates a square matrix of switching probabilities.
    ///
    /// Rows that sum to 1 within [`ROW_SUM_TOLERANCE`] are accepted and then
    /// rescaled so each row sums to 1 as closely as floating point allows.
    pub fn new<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, MarkovError> {
        let size = rows.len();
        if size == 0 {
            return Err(MarkovError::Empty);
        }
        let mut entries = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != size {
                return Err(MarkovError::NonSquare { row: i, len: row.len(), expected: size });
            }
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    return Err(MarkovError::NonFiniteEntry(i, j));
                }
                if p < 0.0 {
                    return Err(MarkovError::NegativeEntry(i, j));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(MarkovError::RowSumViolation(i, sum));
            }
            entries.extend(row.iter().map(|p| p / sum));
        }
        Ok(Self { size, entries })
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        Self { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `P(i → j)`.
    #[inline]
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }

    fn check_index(&self, i: usize) -> Result<(), MarkovError> {
        if i >= self.size {
            Err(MarkovError::IndexOutOfRange { index: i, size: self.size })
        } else {
            Ok(())
        }
    }

    /// Inverse-CDF draw of the successor of `i`: the smallest `j` whose
    /// cumulative row sum strictly exceeds `u`.
    pub fn sample_next(&self, i: usize, u: f64) -> Result<usize, MarkovError> {
        self.check_index(i)?;
        let row = self.row(i);
        let mut cum = 0.0;
        let mut last_positive = i;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                last_positive = j;
                cum += p;
                if cum > u {
                    return Ok(j);
                }
            }
        }
        // Rounding left the cumulative sum just short of u (u near 1).
        Ok(last_positive)
    }

    /// Indices `j` with `P(i → j) > 0`, in index order.
    pub fn successors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row(i).iter().copied().enumerate().filter(|(_, p)| *p > 0.0)
    }

    /// One step of `p ↦ p · Q`.
    pub fn step(&self, dist: &StateDistribution) -> Result<StateDistribution, MarkovError> {
        if dist.len() != self.size {
            return Err(MarkovError::DimensionMismatch { got: dist.len(), expected: self.size });
        }
        Ok(StateDistribution(self.left_multiply(dist.weights())))
    }

    fn left_multiply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (o, q) in out.iter_mut().zip(self.row(i)) {
                *o += pi * q;
            }
        }
        out
    }

    /// Law of the chain after `n` switches from `init`.
    pub fn n_step_distribution(&self, init: &StateDistribution, n: usize) -> Result<StateDistribution, MarkovError> {
        let mut d = init.clone();
        if d.len() != self.size {
            return Err(MarkovError::DimensionMismatch { got: d.len(), expected: self.size });
        }
        for _ in 0..n {
            d = self.step(&d)?;
        }
        Ok(d)
    }

    /// Stationary law reached from the uniform distribution.
    ///
    /// Iterates the lazy kernel `(I + Q) / 2`, whose powers are binomial
    /// (Euler) averages of the powers of `Q`. The lazy kernel is aperiodic,
    /// so the iteration converges geometrically, and because it is a
    /// polynomial in `Q` its limit is the same spectral projection of the
    /// uniform start that Cesàro averages of `Q^n` converge to. Periodic and
    /// reducible chains are therefore handled: the identity returns the
    /// uniform start, the 2-cycle returns `(1/2, 1/2)`.
    pub fn stationary_distribution(&self) -> Result<StateDistribution, MarkovError> {
        let n = self.size;
        let mut p = vec![1.0 / n as f64; n];
        let mut prev_change = f64::INFINITY;
        for _ in 0..STATIONARY_MAX_ITERS {
            let pq = self.left_multiply(&p);
            let mut next: Vec<f64> = p.iter().zip(&pq).map(|(a, b)| 0.5 * (a + b)).collect();
            let sum: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= sum);
            let change: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            // Stop on an exact fixed point, or once inside tolerance and
            // the change has hit the round-off floor.
            if change == 0.0 || (change < STATIONARY_TOLERANCE && change >= prev_change) {
                return Ok(StateDistribution(p));
            }
            prev_change = change;
        }
        if prev_change < STATIONARY_TOLERANCE {
            Ok(StateDistribution(p))
        } else {
            Err(MarkovError::NoConvergence(STATIONARY_MAX_ITERS))
        }
    }
}
