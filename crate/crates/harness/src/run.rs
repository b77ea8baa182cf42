// SPDX-License-Identifier: MIT OR Apache-2.0

//! Replications, traces and Monte Carlo campaigns.
//!
//! Every replication draws its own reference history, calibration holdout
//! and monitored stream from independent generator streams
//! `(seed, rep << 8 | purpose)`, so results do not depend on thread count
//! or scheduling. Aggregation runs over replications in index order.

use std::sync::Arc;

use anyhow::{anyhow, Context};
use kcusum::bounds::{md_upper_bound, mtbfa_lower_bound, BoundReport};
use kcusum::detector::{calibrate_c, DetectorConfig, KernelCusum, ReferenceSet, Step};
use kcusum::sim::{doeblin_of_finite, exact_mmd_finite, stream_rng};
use kcusum::sum::compensated_sum;
use kcusum::{consistency_bound, sigma_from_doeblin, DoeblinParams, Error, KernelSpec};
use rayon::prelude::*;

use crate::config::{require, CalibrationMode, ExperimentConfig, Scenario};

pub const PURPOSE_REFERENCE: u64 = 1;
pub const PURPOSE_HOLDOUT: u64 = 2;
pub const PURPOSE_MONITOR: u64 = 3;

pub fn stream_id(rep: usize, purpose: u64) -> u64 {
    ((rep as u64) << 8) | purpose
}

/// Campaign finished but some row is not trustworthy; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("campaign reliability failure: {0}")]
pub struct ReliabilityError(pub String);

/// Doeblin coefficients and exact MMD, when known.
#[derive(Debug, Clone, Copy, Default)]
pub struct Theory {
    pub pre: Option<DoeblinParams>,
    pub post: Option<DoeblinParams>,
    pub gamma: Option<f64>,
}

/// How `c` was obtained for one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRecord {
    pub correction: f64,
    pub holdout_max: Option<f64>,
    pub holdout_mean: Option<f64>,
    pub positions: usize,
    pub analytic: Option<f64>,
}

/// Reference set and correction for one replication.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub reference: Arc<ReferenceSet>,
    pub calibration: CalibrationRecord,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub scenario: Scenario,
    pub kernel: KernelSpec,
    pub theory: Theory,
    /// `(Σ_reference, Σ_window)` for the analytic envelope.
    pub sigmas: Option<(f64, f64)>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> anyhow::Result<Self> {
        cfg.validate()?;
        let scenario = cfg.scenario()?;
        let kernel = cfg.kernel()?;
        let theory = match &scenario {
            Scenario::Finite { pre, post, .. } => Theory {
                pre: lifted_doeblin(pre),
                post: lifted_doeblin(post),
                gamma: Some(exact_mmd_finite(&kernel, pre, post)?),
            },
            Scenario::Ar(_) => match &cfg.theory {
                Some(t) => Theory {
                    pre: DoeblinParams::new(t.pre_lambda, t.pre_l).ok(),
                    post: match (t.post_lambda, t.post_l) {
                        (Some(lam), Some(l)) => DoeblinParams::new(lam, l).ok(),
                        _ => None,
                    },
                    gamma: t.gamma,
                },
                None => Theory::default(),
            },
        };
        let sigma_ref = cfg
            .calibration
            .sigma_reference
            .or_else(|| theory.pre.map(sigma_from_doeblin));
        let sigmas = sigma_ref.map(|s| (s, cfg.calibration.sigma_window.unwrap_or(s)));
        if cfg.calibration.mode == CalibrationMode::Analytic {
            require(
                sigmas.is_some(),
                "calibration.sigma_reference",
                "analytic calibration needs sigma values or a chain with Doeblin coefficients",
            )?;
        }
        Ok(Self {
            cfg,
            scenario,
            kernel,
            theory,
            sigmas,
        })
    }

    pub fn window(&self) -> usize {
        self.cfg.detector.window
    }

    pub fn min_samples(&self) -> u32 {
        self.cfg.detector.min_samples
    }

    fn seed(&self) -> u64 {
        self.cfg.campaign.seed
    }

    /// Draws `len` observations for `rep`/`purpose`, with the change at `tau`.
    pub fn draw(
        &self,
        rep: usize,
        purpose: u64,
        len: usize,
        tau: Option<usize>,
    ) -> kcusum::Result<Vec<Vec<f64>>> {
        let mut rng = stream_rng(self.seed(), stream_id(rep, purpose));
        match &self.scenario {
            Scenario::Ar(s) => {
                let mut s = s.clone();
                s.length = len;
                s.tau = tau;
                s.seed = self.seed();
                s.simulate_with(&mut rng)
            }
            Scenario::Finite { pre, post, .. } => pre.simulate_switching(post, tau, len, &mut rng),
        }
    }

    /// Reference set and calibrated correction for one replication.
    pub fn prepare(&self, rep: usize) -> anyhow::Result<Prepared> {
        let m = self.cfg.detector.reference_len;
        let history = self.draw(rep, PURPOSE_REFERENCE, m + 1, None)?;
        let reference = Arc::new(ReferenceSet::build(self.kernel.clone(), &history)?);
        let r = self.window();
        let analytic = match self.sigmas {
            Some((s_ref, s_win)) => Some(consistency_bound(s_ref, s_win, m, r)?.value),
            None => None,
        };
        let calibration = match self.cfg.calibration.mode {
            CalibrationMode::Analytic => CalibrationRecord {
                correction: analytic.expect("checked in Experiment::new")
                    + self.cfg.calibration.margin,
                holdout_max: None,
                holdout_mean: None,
                positions: 0,
                analytic,
            },
            CalibrationMode::Fixed => CalibrationRecord {
                correction: self.cfg.calibration.value.expect("validated"),
                holdout_max: None,
                holdout_mean: None,
                positions: 0,
                analytic,
            },
            CalibrationMode::Holdout => {
                let holdout = self.draw(rep, PURPOSE_HOLDOUT, self.cfg.holdout_len(), None)?;
                let cal = calibrate_c(
                    &reference,
                    &holdout,
                    r,
                    self.cfg.calibration.margin,
                    self.sigmas,
                )?;
                CalibrationRecord {
                    correction: cal.correction,
                    holdout_max: Some(cal.holdout_max),
                    holdout_mean: Some(cal.holdout_mean),
                    positions: cal.positions,
                    analytic: cal.analytic,
                }
            }
        };
        Ok(Prepared {
            reference,
            calibration,
        })
    }

    pub fn detector(&self, prepared: &Prepared, threshold: f64) -> kcusum::Result<KernelCusum> {
        KernelCusum::new(
            prepared.reference.clone(),
            DetectorConfig {
                window: self.window(),
                min_samples: self.min_samples(),
                threshold,
                correction: prepared.calibration.correction,
            },
        )
    }

    /// Statistic-clock truncation horizon for threshold `b`.
    pub fn horizon(&self, b: f64) -> u64 {
        (self.cfg.campaign.horizon_factor * (b + f64::from(self.min_samples()))).ceil() as u64
    }

    fn pool(&self) -> anyhow::Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.campaign.threads)
            .build()
            .context("building worker pool")
    }

    fn replicate<T: Send>(
        &self,
        f: impl Fn(usize) -> anyhow::Result<T> + Sync + Send,
    ) -> anyhow::Result<Vec<T>> {
        let reps = self.cfg.campaign.replications;
        self.pool()?
            .install(|| (0..reps).into_par_iter().map(&f).collect())
    }
}

fn lifted_doeblin(chain: &kcusum::sim::FiniteChain) -> Option<DoeblinParams> {
    chain.lifted().ok().and_then(|c| doeblin_of_finite(&c).ok())
}

/// One row of `trace.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub state_norm: f64,
    /// `None` during warm-up.
    pub s_t: Option<f64>,
    /// `None` during warm-up and while `n ≤ M`.
    pub s_hat: Option<f64>,
    pub alarm: bool,
}

#[derive(Debug, Clone)]
pub struct TraceResult {
    pub rows: Vec<TraceRow>,
    pub trajectory: Vec<Vec<f64>>,
    pub calibration: CalibrationRecord,
    pub threshold: f64,
    pub tau: Option<usize>,
    /// Raw index of the first alarm.
    pub alarm_at: Option<usize>,
    /// Set when the run never left warm-up.
    pub notice: Option<String>,
}

/// Single-threaded trace of replication 0.
pub fn run_trace(exp: &Experiment) -> anyhow::Result<TraceResult> {
    let prepared = exp.prepare(0)?;
    let tau = exp.scenario.tau();
    let trajectory = exp.draw(0, PURPOSE_MONITOR, exp.scenario.length(), tau)?;
    let threshold = exp.cfg.detector.threshold;
    let mut det = exp.detector(&prepared, threshold)?;
    let mut rows = Vec::with_capacity(trajectory.len());
    let mut alarm_at = None;
    for (t, y) in trajectory.iter().enumerate() {
        let state_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let row = match det.step(y)? {
            Step::WarmingUp { .. } => TraceRow {
                t,
                state_norm,
                s_t: None,
                s_hat: None,
                alarm: false,
            },
            Step::Statistic(o) => {
                if o.alarm && alarm_at.is_none() {
                    alarm_at = Some(t);
                }
                TraceRow {
                    t,
                    state_norm,
                    s_t: Some(o.s_t),
                    s_hat: o.s_hat.is_finite().then_some(o.s_hat),
                    alarm: o.alarm,
                }
            }
        };
        rows.push(row);
    }
    let notice = (trajectory.len() <= exp.window()).then(|| {
        format!(
            "trajectory length {} never fills the buffer of r = {} pairs; no statistics emitted",
            trajectory.len(),
            exp.window()
        )
    });
    Ok(TraceResult {
        rows,
        trajectory,
        calibration: prepared.calibration,
        threshold,
        tau,
        alarm_at,
        notice,
    })
}

/// One row of `campaign.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignRow {
    pub b: f64,
    pub empirical_mean: f64,
    pub std_error: f64,
    pub n_runs: usize,
    pub theory_bound: Option<f64>,
}

/// Per-threshold bookkeeping written next to the campaign table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub b: f64,
    /// Statistic-clock truncation horizon.
    pub horizon: u64,
    pub truncated: usize,
    /// MD only: runs that alarmed before the change.
    pub false_alarms: usize,
    /// MD only: mean delay on the raw-observation clock.
    pub mean_raw_delay: Option<f64>,
    /// MD only: median statistic-clock delay.
    pub median_delay: Option<f64>,
    pub mean_correction: f64,
    pub d_r: Option<f64>,
    pub unreliable: bool,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub rows: Vec<CampaignRow>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub warnings: Vec<String>,
}

impl CampaignResult {
    pub fn unreliable_rows(&self) -> Vec<f64> {
        self.diagnostics
            .iter()
            .filter(|d| d.unreliable)
            .map(|d| d.b)
            .collect()
    }
}

/// `(mean, sample std / √n)`.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[k]
    } else {
        0.5 * (values[k - 1] + values[k])
    })
}

/// First statistic index at which `Ŝ_n ≥ b`, for each `b`, up to `limit`.
fn first_crossings(
    det: &mut KernelCusum,
    stream: &[Vec<f64>],
    thresholds: &[f64],
    limit: u64,
) -> kcusum::Result<Vec<Option<u64>>> {
    let mut hits = vec![None; thresholds.len()];
    let mut open = thresholds.len();
    for y in stream {
        if let Step::Statistic(o) = det.step(y)? {
            for (hit, &b) in hits.iter_mut().zip(thresholds) {
                if hit.is_none() && o.s_hat >= b {
                    *hit = Some(o.n);
                    open -= 1;
                }
            }
            if open == 0 || o.n >= limit {
                break;
            }
        }
    }
    Ok(hits)
}

/// Mean time between false alarms versus `b` under the pre-change chain.
///
/// Each replication runs one stream and records the first crossing of every
/// threshold. Runs without an alarm inside `horizon(b)` count at the horizon,
/// so the reported mean is a lower bound on the true MTBFA; rows with more
/// than half the runs truncated are flagged unreliable.
pub fn run_mtbfa(exp: &Experiment) -> anyhow::Result<CampaignResult> {
    require(
        exp.scenario.tau().is_none(),
        "scenario.tau",
        "the mtbfa campaign runs without a change; omit tau",
    )?;
    let thresholds = exp.cfg.campaign.thresholds.clone();
    let horizons: Vec<u64> = thresholds.iter().map(|&b| exp.horizon(b)).collect();
    let max_h = *horizons.iter().max().expect("nonempty thresholds");
    let r = exp.window();
    let b_max = *thresholds.last().expect("nonempty thresholds");

    let per_rep = exp.replicate(|rep| {
        let prepared = exp.prepare(rep)?;
        let stream = exp.draw(rep, PURPOSE_MONITOR, r + max_h as usize, None)?;
        let mut det = exp.detector(&prepared, b_max)?;
        let hits = first_crossings(&mut det, &stream, &thresholds, max_h)?;
        Ok((prepared.calibration.correction, hits))
    })?;

    let reps = per_rep.len();
    let mean_c = compensated_sum(per_rep.iter().map(|(c, _)| *c)) / reps as f64;
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    let mut warnings = Vec::new();
    for (i, &b) in thresholds.iter().enumerate() {
        let h = horizons[i];
        let mut truncated = 0;
        let values: Vec<f64> = per_rep
            .iter()
            .map(|(_, hits)| match hits[i] {
                Some(n) if n <= h => n as f64,
                _ => {
                    truncated += 1;
                    h as f64
                }
            })
            .collect();
        let (mean, se) = mean_and_se(&values);
        let theory_bound = match exp.theory.pre {
            Some(p) => match mtbfa_lower_bound(b, exp.min_samples(), p) {
                Ok(v) => Some(v.value),
                Err(Error::BoundNotInformative { alpha1, .. }) => {
                    warnings.push(format!(
                        "b = {b}: below alpha1 = {alpha1}, lower bound not informative"
                    ));
                    None
                }
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        let unreliable = 2 * truncated > reps;
        if unreliable {
            warnings.push(format!(
                "b = {b}: {truncated} of {reps} runs truncated at {h} statistics; mean is a lower bound only"
            ));
        }
        rows.push(CampaignRow {
            b,
            empirical_mean: mean,
            std_error: se,
            n_runs: reps,
            theory_bound,
        });
        diagnostics.push(DiagnosticRow {
            b,
            horizon: h,
            truncated,
            false_alarms: 0,
            mean_raw_delay: None,
            median_delay: None,
            mean_correction: mean_c,
            d_r: None,
            unreliable,
        });
    }
    Ok(CampaignResult {
        rows,
        diagnostics,
        warnings,
    })
}

/// Mean detection delay versus `b` for a change at `tau`.
///
/// Delay runs on the statistic clock from the first statistic whose buffer
/// holds only post-change pairs: with the first statistic emitted at raw
/// index `r` (0-based), that is statistic `n = τ`, and an alarm at statistic
/// `n` has delay `n − τ + 1`. Alarms during the mixed-buffer transition give
/// delays `≤ 0`. The raw-clock delay adds the warm-up offset `r − 1`.
/// Runs alarming before raw index `τ` are false alarms and excluded.
pub fn run_md(exp: &Experiment) -> anyhow::Result<CampaignResult> {
    let tau = exp.scenario.tau();
    require(
        tau.is_some(),
        "scenario.tau",
        "the md campaign needs a change index",
    )?;
    let tau = tau.expect("checked");
    let thresholds = exp.cfg.campaign.thresholds.clone();
    let horizons: Vec<u64> = thresholds.iter().map(|&b| exp.horizon(b)).collect();
    let max_h = *horizons.iter().max().expect("nonempty thresholds");
    let r = exp.window();
    let b_max = *thresholds.last().expect("nonempty thresholds");
    // last statistic needed: n = τ − 1 + max_h, at raw index n + r − 1
    let limit = tau as u64 - 1 + max_h;
    let len = tau + r + max_h as usize;

    let per_rep = exp.replicate(|rep| {
        let prepared = exp.prepare(rep)?;
        let stream = exp.draw(rep, PURPOSE_MONITOR, len, Some(tau))?;
        let mut det = exp.detector(&prepared, b_max)?;
        let hits = first_crossings(&mut det, &stream, &thresholds, limit)?;
        Ok((prepared.calibration.correction, hits))
    })?;

    let reps = per_rep.len();
    let mean_c = compensated_sum(per_rep.iter().map(|(c, _)| *c)) / reps as f64;
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    let mut warnings = Vec::new();
    let d_r = exp.theory.gamma.map(|g| g - 2.0 * mean_c);
    if let Some(d) = d_r.filter(|d| *d <= 0.0) {
        warnings.push(format!(
            "D_r = {d} <= 0 at mean c = {mean_c}: the delay bound is vacuous"
        ));
    }
    for (i, &b) in thresholds.iter().enumerate() {
        let h = horizons[i];
        let mut false_alarms = 0;
        let mut truncated = 0;
        let mut delays = Vec::with_capacity(reps);
        for (_, hits) in &per_rep {
            match hits[i] {
                Some(n) if n + (r as u64) - 1 < tau as u64 => false_alarms += 1,
                Some(n) if (n as f64 - tau as f64 + 1.0) <= h as f64 => {
                    delays.push(n as f64 - tau as f64 + 1.0)
                }
                _ => {
                    truncated += 1;
                    delays.push(h as f64);
                }
            }
        }
        if delays.is_empty() {
            return Err(anyhow!(ReliabilityError(format!(
                "b = {b}: all {reps} runs alarmed before the change at tau = {tau}"
            ))));
        }
        let (mean, se) = mean_and_se(&delays);
        let raw_mean = mean + (r as f64 - 1.0);
        let med = median(&mut delays.clone());
        let theory_bound = match (exp.theory.post, exp.theory.gamma) {
            (Some(q), Some(g)) => match md_upper_bound(b, exp.min_samples(), g, mean_c, q) {
                Ok(v) => Some(v.value),
                Err(Error::ChangeNotDetectable { .. }) => None,
                Err(e) => return Err(e.into()),
            },
            _ => None,
        };
        let unreliable = 2 * truncated > delays.len();
        if unreliable {
            warnings.push(format!(
                "b = {b}: {truncated} of {} runs never alarmed within {h} statistics",
                delays.len()
            ));
        }
        rows.push(CampaignRow {
            b,
            empirical_mean: mean,
            std_error: se,
            n_runs: delays.len(),
            theory_bound,
        });
        diagnostics.push(DiagnosticRow {
            b,
            horizon: h,
            truncated,
            false_alarms,
            mean_raw_delay: Some(raw_mean),
            median_delay: med,
            mean_correction: mean_c,
            d_r,
            unreliable,
        });
    }
    Ok(CampaignResult {
        rows,
        diagnostics,
        warnings,
    })
}

/// Calibration of every replication.
pub fn run_calibrate(exp: &Experiment) -> anyhow::Result<Vec<CalibrationRecord>> {
    exp.replicate(|rep| Ok(exp.prepare(rep)?.calibration))
}

/// Output of [`run_bounds`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSummary {
    /// `c` averaged over replications, as in the md campaign.
    pub correction: f64,
    pub std_error: f64,
    pub replications: usize,
    pub analytic: Option<f64>,
    pub reports: Vec<(f64, BoundReport)>,
}

/// One [`BoundReport`] per configured threshold, at the mean calibrated `c`.
pub fn run_bounds(exp: &Experiment) -> anyhow::Result<BoundsSummary> {
    let pre = exp.theory.pre;
    require(
        pre.is_some(),
        "theory.pre_lambda",
        "bounds need Doeblin coefficients: use a finite scenario or give [theory]",
    )?;
    let pre = pre.expect("checked");
    let records = run_calibrate(exp)?;
    let cs: Vec<f64> = records.iter().map(|r| r.correction).collect();
    let (correction, std_error) = mean_and_se(&cs);
    let post = match (exp.theory.post, exp.theory.gamma) {
        (Some(q), Some(g)) => Some((q, g)),
        _ => None,
    };
    let reports = exp
        .cfg
        .campaign
        .thresholds
        .iter()
        .map(|&b| {
            Ok((
                b,
                BoundReport::build(b, exp.min_samples(), correction, pre, post)?,
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(BoundsSummary {
        correction,
        std_error,
        replications: records.len(),
        analytic: records[0].analytic,
        reports,
    })
}
