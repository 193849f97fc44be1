//! Simulation and exact computation for random walks on the integers with
//! jumps −1, +1 and +2 in an i.i.d. random environment.
//!
//! - [`env`]: environment laws and deterministic per-site realization.
//! - [`matrices`]: transfer matrices, top Lyapunov exponent, regime tests and
//!   large-deviation frequencies of the matrix products.
//! - [`walk`]: the quenched walk, excursions and first passages.
//! - [`renewal`]: online regeneration-epoch detection, overshoot-2 blocks and
//!   the renewal identities.
//! - [`range`]: visited-site counting, range density and excursion tails.
//! - [`hitting`]: exact left-exit probabilities by matrix products and by an
//!   absorption solver.
//! - [`cli`]: config-driven experiment runner.

pub mod cli;
pub mod env;
pub mod error;
pub mod hitting;
pub mod matrices;
pub mod parallel;
pub mod range;
pub mod renewal;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
