//! Simulation and measure estimation for switched ODE systems driven by a
//! discrete-time Markov chain.
//!
//! A hybrid process `Y_t = (x_t, Z_t)` follows the flow of the vector field
//! `f(·, Z_t)` and redraws `Z` from a transition matrix every `h` time units.
//! The crate provides the chain ([`markov`]), the per-state flows
//! ([`flow`]), trajectories, branching trees and the Markov operator
//! ([`hybrid`]), histogram measures and their transport ([`measure`]),
//! attractor estimation and hitting experiments ([`limitset`]), the built-in
//! systems and their config schema ([`systems`]), and a plain-text table
//! format for results ([`columnar`]).

// Index loops mirror the linear algebra; `!(x >= 0.0)` is how NaN gets rejected.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod columnar;
pub mod flow;
pub mod grid;
pub mod hybrid;
pub mod limitset;
pub mod markov;
pub mod measure;
pub mod rng;
pub mod systems;

pub use flow::{FlowError, IntegratorSettings, VectorFieldFamily};
pub use grid::Grid;
pub use hybrid::{HybridState, HybridSystemSpec, HybridWalker, SpiderTree, Trajectory};
pub use markov::{MarkovError, StateDistribution, TransitionMatrix};
pub use measure::{GridMeasure, MarginalMeasure, SamplingParams};
pub use rng::CounterRng;
pub use systems::{SystemConfig, SystemError};

/// Errors from simulation, estimation and I/O routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("tree needs {needed} nodes but the budget is {budget}")]
    NodeBudgetExceeded { needed: u128, budget: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("outside the domain of validity: {0}")]
    DomainError(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Flow(FlowError::NonFiniteState { .. }) | Error::Markov(MarkovError::NoConvergence(_)))
    }
}
