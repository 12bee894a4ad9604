//! Markov-modulated fluid queues: first-return matrices, stationary level
//! distribution, first-passage transforms, two-sided escape probabilities
//! and a Monte Carlo cross-check.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod model;
pub mod numerics;
pub mod passage;
pub mod riccati;
pub mod simulator;
pub mod stationary;

pub use error::{FluidError, Result};
pub use model::{
    censor, classify, load_model, partition_phases, CensoredGenerator, FluidModel, PhasePartition, Regime,
};
pub use passage::{escape, transform_at, EscapeResult, TransformPoint};
pub use riccati::{solve, wiener_hopf_residuals, Algorithm, RiccatiSolution, SolverOptions};
pub use simulator::{estimate_escape, estimate_psi, simulate_path, SimulationEstimate};
pub use stationary::{stationary_distribution, StationaryDistribution};
