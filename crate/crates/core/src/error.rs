// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors and non-fatal signals raised by the detector library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The sliding buffer does not yet hold `r + 1` observations.
    #[error("warm-up incomplete: {needed} more observation(s) required")]
    WarmupIncomplete { needed: usize },

    #[error("precondition violated: {message}")]
    Precondition {
        message: String,
        /// Smallest sample size for which the call is valid, when one exists.
        min_valid_n: Option<u64>,
    },

    /// `b` does not exceed `alpha1`, so the false-alarm bound carries no information.
    #[error("bound not informative: b = {b} <= alpha1 = {alpha1}")]
    BoundNotInformative { b: f64, alpha1: f64 },

    /// `D_r <= 0`: the drift margin is not positive and the delay bound is vacuous.
    #[error("change not detectable at this window: D_r = {d_r} <= 0")]
    ChangeNotDetectable { d_r: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
