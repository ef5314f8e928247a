//! Fixtures shared by the criterion benchmarks in `benches/`.

use hybridsim::measure::{empirical_measure, GridMeasure};
use hybridsim::systems::{build_cstr_2d, build_linear_1d, reference_cstr_transition, reference_linear_transition};
use hybridsim::{HybridState, HybridSystemSpec, SamplingParams, TransitionMatrix};

pub fn linear_system() -> HybridSystemSpec {
    build_linear_1d(reference_linear_transition(), 1.0).expect("built-in system")
}

pub fn reactor_system() -> HybridSystemSpec {
    build_cstr_2d(reference_cstr_transition(), 1.0).expect("built-in system")
}

/// Empirical measure of the linear system at phase 0.3 on its domain grid
/// refined `refine` times.
pub fn linear_measure(refine: usize, n_samples: usize) -> GridMeasure {
    let spec = linear_system();
    let grid = spec.domain().refined(refine).expect("valid refinement");
    let params = SamplingParams { burn_in: 100, n_samples, seed: 1 };
    empirical_measure(&spec, &HybridState::new(vec![0.0], 0), 0.3, params, &grid).expect("valid sampling")
}

/// Dense `n`-state chain with a banded, strictly positive structure.
pub fn banded_chain(n: usize) -> TransitionMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..n).map(|j| 1.0 / (1.0 + (i as f64 - j as f64).abs())).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    TransitionMatrix::new(&rows).expect("rows are normalized")
}
