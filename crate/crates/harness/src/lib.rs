// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment harness for the `kcusum` detector.
//!
//! Reads a TOML experiment description, runs single traces or Monte Carlo
//! campaigns over seeded replications, and writes CSV tables, a bounds
//! report and static SVG plots. The SVGs are drawn from the CSV text so
//! they cannot disagree with it.

#![forbid(unsafe_code)]

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;
pub mod run;

pub use commands::{execute, exit_code, Command, Overrides, Report};
pub use config::{ConfigError, ExperimentConfig};
pub use run::{Experiment, ReliabilityError};
