//! Quantum and classical kicked rotor simulations, the mapping of the rotor
//! onto Anderson tight-binding models, and finite-time scaling analysis of
//! the resulting transport curves.
//!
//! Units are dimensionless throughout: time is counted in kick periods, the
//! momentum ladder of a quasimomentum family is `p = kbar * (m + beta_qm)` and
//! the free evolution over one period multiplies amplitude `m` by
//! `exp(-i * kbar * (m + beta_qm)^2 / 2)`.

pub mod anderson;
pub mod classical;
pub mod engine;
pub mod fit;
pub mod params;
pub mod scaling;
pub mod seed;
pub mod stats;

pub use params::{EnsembleSpec, RunConfig, SimParams, ValidatedParams};
