// SPDX-License-Identifier: MIT OR Apache-2.0

//! Online kernel CUSUM.
//!
//! Each new observation `y_t` extends a sliding buffer of the last `r + 1`
//! raw observations, i.e. `r` consecutive pairs. The per-step score is
//!
//! ```text
//! s_t = MMD(buffer pairs, reference pairs) − c
//! ```
//!
//! and the detector tracks `Ŝ_n = max_{1 ≤ k ≤ n−M} Σ_{t=k}^{n} s_t`,
//! alarming at the first `n` with `Ŝ_n ≥ b`.
//!
//! Clock: `n` counts emitted statistics. The first statistic is emitted on
//! the `(r + 1)`-th observation, so statistic `n` corresponds to raw
//! observation index `n + r − 1` (0-based).

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::{row_sum, self_gram_sum, KernelSpec, PairPoint};
use crate::mmd::{combine, consistency_bound, lift};
use crate::sum::{compensated_sum, NeumaierSum};

/// Pre-change reference pairs with the cached self-term.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    kernel: KernelSpec,
    pairs: Vec<PairPoint>,
    /// `Σ_{i,j} k(x̃_i, x̃_j)`, not yet divided by `m²`.
    self_sum: f64,
}

impl ReferenceSet {
    /// Lifts `history` (length `m + 1`) into `m` reference pairs.
    pub fn build<V: AsRef<[f64]>>(kernel: KernelSpec, history: &[V]) -> Result<Self> {
        let pairs = lift(history)?.into_pairs();
        Ok(Self::from_lifted(kernel, pairs))
    }

    pub fn from_pairs(kernel: KernelSpec, pairs: Vec<PairPoint>) -> Result<Self> {
        crate::kernel::check_set(&pairs, "reference set")?;
        Ok(Self::from_lifted(kernel, pairs))
    }

    fn from_lifted(kernel: KernelSpec, pairs: Vec<PairPoint>) -> Self {
        let self_sum = self_gram_sum(&kernel, &pairs);
        Self {
            kernel,
            pairs,
            self_sum,
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn pairs(&self) -> &[PairPoint] {
        &self.pairs
    }

    /// Number of reference pairs `m`.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Dimension of one raw observation.
    pub fn dim(&self) -> usize {
        self.pairs[0].dim()
    }

    /// `(1/m²) Σ_{i,j} k(x̃_i, x̃_j)`.
    pub fn self_term(&self) -> f64 {
        let m = self.len() as f64;
        self.self_sum / (m * m)
    }

    pub(crate) fn self_sum(&self) -> f64 {
        self.self_sum
    }

    #[inline]
    fn cross_row(&self, z: &[f64]) -> f64 {
        row_sum(&self.kernel, z, &self.pairs)
    }
}

/// Detector parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Buffer size `r` in pairs.
    pub window: usize,
    /// Minimum sample `M`.
    pub min_samples: u32,
    /// Threshold `b`.
    pub threshold: f64,
    /// Correction constant `c` subtracted from every raw MMD.
    pub correction: f64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("window r must be >= 1"));
        }
        if self.min_samples == 0 {
            return Err(Error::invalid("minimum sample M must be >= 1"));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::invalid(format!(
                "threshold b must be finite and >= 0; got {}",
                self.threshold
            )));
        }
        if !(self.correction.is_finite() && self.correction >= 0.0) {
            return Err(Error::invalid(format!(
                "correction c must be finite and >= 0; got {}",
                self.correction
            )));
        }
        Ok(())
    }
}

/// Sliding buffer of `r` pairs with incrementally maintained Gram aggregates.
///
/// Pairs live in `r` slots; absolute pair `p` occupies slot `p mod r`. The
/// slot-indexed `r × r` Gram matrix is kept so an evicted pair's row can be
/// subtracted without re-evaluating the kernel. Row sums of the within-buffer
/// Gram matrix are updated in place and rebuilt from the matrix every `r`
/// pairs, which bounds accumulated roundoff.
#[derive(Debug, Clone)]
pub struct MmdWindow {
    r: usize,
    dim: usize,
    raw: VecDeque<Vec<f64>>,
    slots: Vec<Vec<f64>>,
    gram: Vec<f64>,
    cross_rows: Vec<f64>,
    within_rows: Vec<f64>,
    pairs_seen: u64,
    since_refresh: usize,
}

impl MmdWindow {
    pub fn new(r: usize, dim: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::invalid("window r must be >= 1"));
        }
        if dim == 0 {
            return Err(Error::invalid("observation dimension must be >= 1"));
        }
        Ok(Self {
            r,
            dim,
            raw: VecDeque::with_capacity(r + 1),
            slots: vec![Vec::new(); r],
            gram: vec![0.0; r * r],
            cross_rows: vec![0.0; r],
            within_rows: vec![0.0; r],
            pairs_seen: 0,
            since_refresh: 0,
        })
    }

    pub fn window(&self) -> usize {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw observations currently buffered, oldest first (at most `r + 1`).
    pub fn raw(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.raw.iter().map(Vec::as_slice)
    }

    fn filled(&self) -> usize {
        (self.pairs_seen as usize).min(self.r)
    }

    pub fn is_warm(&self) -> bool {
        self.filled() == self.r
    }

    /// Observations still needed before the first statistic.
    pub fn needed(&self) -> usize {
        self.r + 1 - self.raw.len().min(self.r + 1)
    }

    /// Buffered pairs, oldest first.
    pub fn pairs(&self) -> Vec<PairPoint> {
        let filled = self.filled();
        let start = self.pairs_seen - filled as u64;
        (start..self.pairs_seen)
            .map(|p| {
                PairPoint::from_concat(self.slots[(p % self.r as u64) as usize].clone())
                    .expect("stored pairs are well formed")
            })
            .collect()
    }

    /// Appends one observation; returns the raw MMD once `r` pairs are buffered.
    pub fn push(&mut self, reference: &ReferenceSet, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        if reference.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: reference.dim(),
            });
        }
        if let Some(prev) = self.raw.back() {
            let mut z = Vec::with_capacity(2 * self.dim);
            z.extend_from_slice(prev);
            z.extend_from_slice(y);
            self.insert_pair(reference, z);
        }
        if self.raw.len() == self.r + 1 {
            self.raw.pop_front();
        }
        self.raw.push_back(y.to_vec());
        self.current(reference)
    }

    /// Raw MMD of the current buffer against `reference`.
    pub fn current(&self, reference: &ReferenceSet) -> Result<f64> {
        if !self.is_warm() {
            return Err(Error::WarmupIncomplete {
                needed: self.needed(),
            });
        }
        let within = compensated_sum(self.within_rows.iter().copied());
        let cross = compensated_sum(self.cross_rows.iter().copied());
        Ok(combine(within, cross, reference.self_sum(), self.r, reference.len()).sqrt())
    }

    fn insert_pair(&mut self, reference: &ReferenceSet, z: Vec<f64>) {
        let r = self.r;
        let kernel = reference.kernel();
        let slot = (self.pairs_seen % r as u64) as usize;
        let evicting = self.pairs_seen >= r as u64;
        let occupied = self.filled();
        for j in 0..r {
            if j == slot || (!evicting && j >= occupied) {
                continue;
            }
            let g = kernel.eval_slices(&z, &self.slots[j]);
            let old = if evicting {
                self.gram[slot * r + j]
            } else {
                0.0
            };
            self.within_rows[j] += g - old;
            self.gram[slot * r + j] = g;
            self.gram[j * r + slot] = g;
        }
        self.gram[slot * r + slot] = kernel.eval_slices(&z, &z);
        self.cross_rows[slot] = reference.cross_row(&z);
        self.slots[slot] = z;
        self.pairs_seen += 1;
        self.within_rows[slot] = self.gram_row_sum(slot);

        self.since_refresh += 1;
        if self.since_refresh >= r {
            self.refresh_rows();
        }
    }

    fn gram_row_sum(&self, slot: usize) -> f64 {
        let filled = self.filled();
        let r = self.r;
        if filled == r {
            compensated_sum(self.gram[slot * r..(slot + 1) * r].iter().copied())
        } else {
            // slots 0..filled are occupied during the first pass
            compensated_sum(self.gram[slot * r..slot * r + filled].iter().copied())
        }
    }

    fn refresh_rows(&mut self) {
        for s in 0..self.filled() {
            self.within_rows[s] = self.gram_row_sum(s);
        }
        self.since_refresh = 0;
    }

    /// Full recomputation of the aggregates from the stored pairs.
    pub fn recompute(&self, reference: &ReferenceSet) -> Result<f64> {
        if !self.is_warm() {
            return Err(Error::WarmupIncomplete {
                needed: self.needed(),
            });
        }
        crate::mmd::mmd(reference.kernel(), &self.pairs(), reference.pairs())
    }

    /// Max absolute gap between cached and recomputed row aggregates.
    pub fn cache_drift(&self, reference: &ReferenceSet) -> f64 {
        let pairs = self.pairs();
        let kernel = reference.kernel();
        let filled = self.filled();
        let start = self.pairs_seen - filled as u64;
        let mut worst: f64 = 0.0;
        for (idx, p) in pairs.iter().enumerate() {
            let slot = ((start + idx as u64) % self.r as u64) as usize;
            let within = row_sum(kernel, p.as_slice(), &pairs);
            let cross = row_sum(kernel, p.as_slice(), reference.pairs());
            worst = worst
                .max((within - self.within_rows[slot]).abs())
                .max((cross - self.cross_rows[slot]).abs());
        }
        worst
    }

    pub(crate) fn parts(&self) -> WindowParts<'_> {
        WindowParts {
            pairs_seen: self.pairs_seen,
            since_refresh: self.since_refresh,
            within_rows: &self.within_rows,
        }
    }

    /// Rebuilds a window from checkpointed parts. Gram entries and cross
    /// rows are deterministic kernel evaluations and are recomputed.
    pub(crate) fn from_parts(
        reference: &ReferenceSet,
        r: usize,
        dim: usize,
        raw: Vec<Vec<f64>>,
        pairs_seen: u64,
        since_refresh: usize,
        within_rows: Vec<f64>,
    ) -> Result<Self> {
        let mut w = Self::new(r, dim)?;
        if raw.len() > r + 1 || raw.iter().any(|v| v.len() != dim) {
            return Err(Error::Checkpoint("malformed raw buffer".into()));
        }
        if within_rows.len() != r || since_refresh >= r {
            return Err(Error::Checkpoint("malformed row aggregates".into()));
        }
        let expected_raw = if raw.is_empty() {
            0
        } else {
            (pairs_seen as usize).min(r) + 1
        };
        if raw.len() != expected_raw {
            return Err(Error::Checkpoint(
                "pair count inconsistent with buffer".into(),
            ));
        }
        w.pairs_seen = pairs_seen;
        let filled = w.filled();
        let start = pairs_seen - filled as u64;
        let kernel = reference.kernel();
        // raw[i], raw[i+1] form pair start + i
        for i in 0..filled {
            let p = start + i as u64;
            let slot = (p % r as u64) as usize;
            let mut z = raw[i].clone();
            z.extend_from_slice(&raw[i + 1]);
            w.cross_rows[slot] = reference.cross_row(&z);
            w.slots[slot] = z;
        }
        for i in 0..filled {
            let pi = start + i as u64;
            let si = (pi % r as u64) as usize;
            for j in 0..=i {
                let sj = ((start + j as u64) % r as u64) as usize;
                // entries were first evaluated with the newer pair as left argument
                let g = kernel.eval_slices(&w.slots[si], &w.slots[sj]);
                w.gram[si * r + sj] = g;
                w.gram[sj * r + si] = g;
            }
        }
        w.raw = raw.into();
        w.within_rows = within_rows;
        w.since_refresh = since_refresh;
        Ok(w)
    }
}

pub(crate) struct WindowParts<'a> {
    pub pairs_seen: u64,
    pub since_refresh: usize,
    pub within_rows: &'a [f64],
}

/// Streaming `Ŝ_n` via prefix sums and a lagged running minimum.
///
/// With `C_n = Σ_{t ≤ n} s_t`, `Ŝ_n = C_n − min_{0 ≤ j ≤ n−M−1} C_j`.
/// For `n ≤ M` the admissible range is empty and `Ŝ_n = −∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    n: u64,
    prefix: NeumaierSum,
    min_lagged: f64,
    /// `C_j` not yet eligible for the minimum, oldest first.
    pending: VecDeque<f64>,
    s_hat: f64,
    alarmed_at: Option<u64>,
}

impl Default for CusumState {
    fn default() -> Self {
        Self::new()
    }
}

impl CusumState {
    pub fn new() -> Self {
        Self {
            n: 0,
            prefix: NeumaierSum::new(),
            min_lagged: f64::INFINITY,
            pending: VecDeque::from([0.0]),
            s_hat: f64::NEG_INFINITY,
            alarmed_at: None,
        }
    }

    /// Feeds `s_n`; returns `Ŝ_n`.
    pub fn update(&mut self, s: f64, min_samples: u32, threshold: f64) -> f64 {
        self.n += 1;
        let n = self.n;
        self.prefix.add(s);
        let c_n = self.prefix.value();
        let lag = u64::from(min_samples) + 1;
        while let Some(&front) = self.pending.front() {
            let j = n - self.pending.len() as u64;
            if j + lag > n {
                break;
            }
            self.min_lagged = self.min_lagged.min(front);
            self.pending.pop_front();
        }
        self.pending.push_back(c_n);
        self.s_hat = if self.min_lagged.is_finite() {
            c_n - self.min_lagged
        } else {
            f64::NEG_INFINITY
        };
        if self.alarmed_at.is_none() && self.s_hat >= threshold {
            self.alarmed_at = Some(n);
        }
        self.s_hat
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn s_hat(&self) -> f64 {
        self.s_hat
    }

    pub fn alarmed_at(&self) -> Option<u64> {
        self.alarmed_at
    }

    pub(crate) fn parts(&self) -> CusumParts<'_> {
        let (sum, comp) = self.prefix.parts();
        CusumParts {
            n: self.n,
            prefix_sum: sum,
            prefix_comp: comp,
            min_lagged: self.min_lagged,
            pending: self.pending.as_slices(),
            s_hat: self.s_hat,
            alarmed_at: self.alarmed_at,
        }
    }

    pub(crate) fn from_raw(
        n: u64,
        prefix_sum: f64,
        prefix_comp: f64,
        min_lagged: f64,
        pending: Vec<f64>,
        s_hat: f64,
        alarmed_at: Option<u64>,
    ) -> Self {
        Self {
            n,
            prefix: NeumaierSum::from_parts(prefix_sum, prefix_comp),
            min_lagged,
            pending: pending.into(),
            s_hat,
            alarmed_at,
        }
    }
}

pub(crate) struct CusumParts<'a> {
    pub n: u64,
    pub prefix_sum: f64,
    pub prefix_comp: f64,
    pub min_lagged: f64,
    pub pending: (&'a [f64], &'a [f64]),
    pub s_hat: f64,
    pub alarmed_at: Option<u64>,
}

/// One emitted statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Statistic clock, starting at 1.
    pub n: u64,
    pub raw_mmd: f64,
    /// `raw_mmd − c`.
    pub s_t: f64,
    /// `Ŝ_n`, or `−∞` while `n ≤ M`.
    pub s_hat: f64,
    pub alarm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// Buffer not yet full; no statistic.
    WarmingUp {
        needed: usize,
    },
    Statistic(StepOutcome),
}

impl Step {
    pub fn statistic(&self) -> Option<&StepOutcome> {
        match self {
            Step::Statistic(o) => Some(o),
            Step::WarmingUp { .. } => None,
        }
    }
}

/// Kernel CUSUM detector for one observation stream.
#[derive(Debug, Clone)]
pub struct KernelCusum {
    reference: Arc<ReferenceSet>,
    config: DetectorConfig,
    window: MmdWindow,
    cusum: CusumState,
}

impl KernelCusum {
    pub fn new(reference: Arc<ReferenceSet>, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let window = MmdWindow::new(config.window, reference.dim())?;
        Ok(Self {
            reference,
            config,
            window,
            cusum: CusumState::new(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn reference(&self) -> &Arc<ReferenceSet> {
        &self.reference
    }

    pub fn window(&self) -> &MmdWindow {
        &self.window
    }

    pub fn cusum(&self) -> &CusumState {
        &self.cusum
    }

    /// Statistic index of the first alarm; frozen until [`Self::reset`].
    pub fn alarmed_at(&self) -> Option<u64> {
        self.cusum.alarmed_at()
    }

    /// Ingests one observation.
    pub fn step(&mut self, y: &[f64]) -> Result<Step> {
        let raw_mmd = match self.window.push(&self.reference, y) {
            Ok(v) => v,
            Err(Error::WarmupIncomplete { needed }) => return Ok(Step::WarmingUp { needed }),
            Err(e) => return Err(e),
        };
        let s_t = raw_mmd - self.config.correction;
        let s_hat = self
            .cusum
            .update(s_t, self.config.min_samples, self.config.threshold);
        Ok(Step::Statistic(StepOutcome {
            n: self.cusum.n(),
            raw_mmd,
            s_t,
            s_hat,
            alarm: s_hat >= self.config.threshold,
        }))
    }

    /// Clears the CUSUM state and alarm; the buffer is kept.
    pub fn reset(&mut self) {
        self.cusum = CusumState::new();
    }

    pub(crate) fn from_parts(
        reference: Arc<ReferenceSet>,
        config: DetectorConfig,
        window: MmdWindow,
        cusum: CusumState,
    ) -> Self {
        Self {
            reference,
            config,
            window,
            cusum,
        }
    }
}

/// Result of holdout calibration of `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Calibrated correction: holdout maximum plus margin.
    pub correction: f64,
    pub holdout_max: f64,
    pub holdout_mean: f64,
    /// Number of buffer positions evaluated.
    pub positions: usize,
    /// Analytic bias envelope for comparison, when weak-dependence sums were supplied.
    pub analytic: Option<f64>,
}

/// Minimum number of buffer positions a calibration holdout must produce.
pub const MIN_CALIBRATION_POSITIONS: usize = 10;

/// `max(values) + margin`.
pub fn correction_from_raw(values: &[f64], margin: f64) -> Result<f64> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::invalid(format!(
            "margin must be finite and >= 0; got {margin}"
        )));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::invalid("no raw values to calibrate from"));
    }
    Ok(max + margin)
}

/// Runs the raw statistic over a pre-change holdout and picks `c` so every
/// holdout score is `≤ −margin`.
///
/// `sigmas = (Σ_reference, Σ_window)` adds the analytic envelope
/// `√((1+2Σ_ref)/m) + √((1+2Σ_win)/r)` to the report.
pub fn calibrate_c<V: AsRef<[f64]>>(
    reference: &ReferenceSet,
    holdout: &[V],
    r: usize,
    margin: f64,
    sigmas: Option<(f64, f64)>,
) -> Result<Calibration> {
    if holdout.len() < r + MIN_CALIBRATION_POSITIONS {
        return Err(Error::invalid(format!(
            "calibration holdout needs >= {} observations for r = {r}; got {}",
            r + MIN_CALIBRATION_POSITIONS,
            holdout.len()
        )));
    }
    let mut window = MmdWindow::new(r, reference.dim())?;
    let mut raw = Vec::with_capacity(holdout.len() - r);
    for y in holdout {
        match window.push(reference, y.as_ref()) {
            Ok(v) => raw.push(v),
            Err(Error::WarmupIncomplete { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let correction = correction_from_raw(&raw, margin)?;
    let analytic = match sigmas {
        Some((s_ref, s_win)) => Some(consistency_bound(s_ref, s_win, reference.len(), r)?.value),
        None => None,
    };
    Ok(Calibration {
        correction,
        holdout_max: correction - margin,
        holdout_mean: compensated_sum(raw.iter().copied()) / raw.len() as f64,
        positions: raw.len(),
        analytic,
    })
}
