//! Rectangular grids over the domain box.

use crate::Error;

/// Axis-aligned box `[lo, hi]` split into `bins[a]` equal cells per axis.
///
/// Cells are numbered row-major with the last axis varying fastest. The box
/// is closed: a point on the upper face belongs to the last cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    bins: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: Vec<usize>) -> Result<Self, Error> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != bins.len() {
            return Err(Error::InvalidArgument(format!(
                "grid needs matching lo/hi/bins per axis (got {}, {}, {})",
                lo.len(),
                hi.len(),
                bins.len()
            )));
        }
        for a in 0..lo.len() {
            if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
                return Err(Error::InvalidArgument(format!(
                    "axis {a}: need finite lo < hi (got [{}, {}])",
                    lo[a], hi[a]
                )));
            }
            if bins[a] == 0 {
                return Err(Error::InvalidArgument(format!("axis {a}: zero bins")));
            }
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn cell_count(&self) -> usize {
        self.bins.iter().product()
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.bins[axis] as f64
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Per-axis bin indices of `x`, `None` outside the box.
    pub fn locate_axes(&self, x: &[f64]) -> Option<Vec<usize>> {
        if x.len() != self.dim() {
            return None;
        }
        let mut idx = Vec::with_capacity(x.len());
        for a in 0..x.len() {
            let (l, h, b) = (self.lo[a], self.hi[a], self.bins[a]);
            let v = x[a];
            if !(l <= v && v <= h) {
                return None;
            }
            let i = (((v - l) / (h - l)) * b as f64) as usize;
            idx.push(i.min(b - 1));
        }
        Some(idx)
    }

    /// Flat cell index of `x`, `None` outside the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        self.locate_axes(x).map(|idx| self.flatten(&idx))
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.bins).fold(0, |acc, (i, b)| acc * b + i)
    }

    pub fn unflatten(&self, mut cell: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = cell % self.bins[a];
            cell /= self.bins[a];
        }
        idx
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        self.unflatten(cell)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + (i as f64 + 0.5) * self.cell_width(a))
            .collect()
    }

    /// `(lower corner, upper corner)` of a cell.
    pub fn cell_bounds(&self, cell: usize) -> (Vec<f64>, Vec<f64>) {
        let idx = self.unflatten(cell);
        let lower = (0..self.dim()).map(|a| self.lo[a] + idx[a] as f64 * self.cell_width(a)).collect();
        let upper = (0..self.dim()).map(|a| self.lo[a] + (idx[a] + 1) as f64 * self.cell_width(a)).collect();
        (lower, upper)
    }

    /// Same box with every cell split into `factor` pieces per axis.
    pub fn refined(&self, factor: usize) -> Result<Self, Error> {
        if factor == 0 {
            return Err(Error::InvalidArgument("refinement factor must be positive".into()));
        }
        Self::new(self.lo.clone(), self.hi.clone(), self.bins.iter().map(|b| b * factor).collect())
    }

    /// Same box with `factor` cells per axis merged; bins must divide evenly.
    pub fn coarsened(&self, factor: usize) -> Result<Self, Error> {
        if factor == 0 || self.bins.iter().any(|b| b % factor != 0) {
            return Err(Error::InvalidArgument(format!("cannot coarsen bins {:?} by {factor}", self.bins)));
        }
        Self::new(self.lo.clone(), self.hi.clone(), self.bins.iter().map(|b| b / factor).collect())
    }

    /// Maps each cell of `self` to its parent in `self.coarsened(factor)`.
    pub(crate) fn parent_cell(&self, cell: usize, coarse: &Grid, factor: usize) -> usize {
        let idx: Vec<usize> = self.unflatten(cell).into_iter().map(|i| i / factor).collect();
        coarse.flatten(&idx)
    }
}
