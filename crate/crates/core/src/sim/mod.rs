// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic Markov trajectories: vector AR(1) processes with a mid-stream
//! noise change, and small finite-state chains whose pair laws and MMDs are
//! exactly computable.

mod ar;
mod finite;
mod rng;

pub use ar::{
    reference_system_matrix, simulate_ar, spectral_radius, ArScenario, GaussianNoise,
    DEFAULT_BURN_IN,
};
pub use finite::{doeblin_of_finite, exact_mmd_finite, stationary_distribution, FiniteChain};
pub use rng::{stream_rng, SimRng};
