// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pair lifting and the plug-in (V-statistic) MMD between sample sets.

use crate::error::{Error, Result};
use crate::kernel::{check_set, gram_sum, KernelSpec, PairPoint};

/// A trajectory `x_0, …, x_n` rewritten as consecutive pairs `(x_i, x_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedTrajectory {
    pairs: Vec<PairPoint>,
}

impl LiftedTrajectory {
    pub fn pairs(&self) -> &[PairPoint] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<PairPoint> {
        self.pairs
    }

    /// Length of the trajectory the pairs came from.
    pub fn source_len(&self) -> usize {
        self.pairs.len() + 1
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Lifts a raw trajectory to its second-order chain.
pub fn lift<V: AsRef<[f64]>>(trajectory: &[V]) -> Result<LiftedTrajectory> {
    if trajectory.len() < 2 {
        return Err(Error::invalid(format!(
            "lifting needs a trajectory of length >= 2; got {}",
            trajectory.len()
        )));
    }
    let pairs = trajectory
        .windows(2)
        .map(|w| PairPoint::new(w[0].as_ref(), w[1].as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let d = pairs[0].dim();
    if let Some(p) = pairs.iter().find(|p| p.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.dim(),
        });
    }
    Ok(LiftedTrajectory { pairs })
}

/// Assembles `‖μ̂_A − μ̂_B‖²` from its three Gram aggregates and clamps roundoff at zero.
#[inline]
pub(crate) fn combine(aa: f64, ab: f64, bb: f64, na: usize, nb: usize) -> f64 {
    let na = na as f64;
    let nb = nb as f64;
    let v = aa / (na * na) - 2.0 * ab / (na * nb) + bb / (nb * nb);
    v.max(0.0)
}

/// Biased squared MMD between the empirical measures of `a` and `b`.
///
/// Includes the diagonal `i = j` terms, so the value is the squared RKHS
/// distance between empirical mean embeddings and is nonnegative.
pub fn mmd_squared(k: &KernelSpec, a: &[PairPoint], b: &[PairPoint]) -> Result<f64> {
    let la = check_set(a, "first sample set")?;
    let lb = check_set(b, "second sample set")?;
    if la != lb {
        return Err(Error::DimensionMismatch {
            expected: la,
            got: lb,
        });
    }
    // Same accumulation routine for all three terms: identical inputs then
    // cancel to exactly zero.
    let aa = gram_sum(k, a, a)?;
    let bb = gram_sum(k, b, b)?;
    let ab = gram_sum(k, a, b)?;
    Ok(combine(aa, ab, bb, a.len(), b.len()))
}

/// `√mmd_squared`.
pub fn mmd(k: &KernelSpec, a: &[PairPoint], b: &[PairPoint]) -> Result<f64> {
    mmd_squared(k, a, b).map(f64::sqrt)
}

/// Bias envelope of the plug-in MMD for two weakly dependent samples:
///
/// ```text
/// c = √((1 + 2Σ_x)/n_x) + √((1 + 2Σ_y)/n_y)
/// ```
///
/// where `Σ` bounds the summed RKHS autocovariances of each chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyBound {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub value: f64,
}

pub fn consistency_bound(
    sigma_x: f64,
    sigma_y: f64,
    n_x: usize,
    n_y: usize,
) -> Result<ConsistencyBound> {
    for (name, s) in [("sigma_x", sigma_x), ("sigma_y", sigma_y)] {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::invalid(format!(
                "{name} must be finite and >= 0; got {s}"
            )));
        }
    }
    if n_x == 0 || n_y == 0 {
        return Err(Error::invalid("sample sizes must be >= 1"));
    }
    let value =
        ((1.0 + 2.0 * sigma_x) / n_x as f64).sqrt() + ((1.0 + 2.0 * sigma_y) / n_y as f64).sqrt();
    Ok(ConsistencyBound {
        sigma_x,
        sigma_y,
        n_x,
        n_y,
        value,
    })
}
