// SPDX-License-Identifier: MIT OR Apache-2.0

//! Online change detection for Markov chains on metric spaces.
//!
//! Observations are lifted to consecutive pairs `(x_t, x_{t+1})`, so the
//! detector compares transition laws `π ⊗ P` rather than marginals. A
//! sliding buffer of pairs is scored against a pre-change reference set by
//! the kernel MMD, the score is shifted by a correction constant for
//! dependent samples, and a CUSUM over the shifted scores raises the alarm.
//!
//! Modules:
//! - [`kernel`]: Gaussian-mixture kernels on pairs and Gram sums.
//! - [`mmd`]: pair lifting, plug-in MMD, and the weak-dependence bias envelope.
//! - [`detector`]: reference set, incremental buffer, CUSUM, calibration.
//! - [`checkpoint`]: versioned binary snapshots of detector state.
//! - [`bounds`]: closed-form calculators from Doeblin coefficients.
//! - [`sim`]: AR(1) and finite-state simulators with exact oracles.

#![forbid(unsafe_code)]

pub mod bounds;
pub mod checkpoint;
pub mod detector;
pub mod error;
pub mod kernel;
pub mod mmd;
pub mod sim;
pub mod sum;

pub use bounds::{
    hoeffding_tail, md_upper_bound, mtbfa_lower_bound, rho_envelope, sigma_from_doeblin,
    BoundReport, DoeblinParams, MdBound, MtbfaBound,
};
pub use detector::{
    calibrate_c, correction_from_raw, Calibration, CusumState, DetectorConfig, KernelCusum,
    MmdWindow, ReferenceSet, Step, StepOutcome,
};
pub use error::{Error, Result};
pub use kernel::{gram_sum, KernelSpec, PairPoint};
pub use mmd::{consistency_bound, lift, mmd, mmd_squared, ConsistencyBound, LiftedTrajectory};
