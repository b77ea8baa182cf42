// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use kcusum::sim::{ArScenario, FiniteChain, GaussianNoise, DEFAULT_BURN_IN};
use kcusum::{DoeblinParams, KernelSpec};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

/// Error in the experiment configuration; maps to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("config error in `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub campaign: CampaignConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Doeblin coefficients for scenarios where they cannot be derived.
    #[serde(default)]
    pub theory: Option<TheoryConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Ar,
    Finite,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_length")]
    pub length: usize,
    /// Change index; omit for no change.
    pub tau: Option<usize>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub ar: Option<ArConfig>,
    pub finite: Option<FiniteConfig>,
}

fn default_length() -> usize {
    2000
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

/// A scalar means the all-equal vector (for means) or a multiple of `I`
/// (for covariances).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArConfig {
    /// System matrix rows; defaults to the built-in 4×4 reference matrix.
    pub system: Option<Vec<Vec<f64>>>,
    #[serde(default = "zero_vector")]
    pub pre_mean: VectorSpec,
    #[serde(default = "pre_cov_default")]
    pub pre_cov: MatrixSpec,
    /// Defaults to the pre-change value.
    pub post_mean: Option<VectorSpec>,
    pub post_cov: Option<MatrixSpec>,
}

fn zero_vector() -> VectorSpec {
    VectorSpec::Scalar(0.0)
}

fn pre_cov_default() -> MatrixSpec {
    MatrixSpec::Scalar(0.1)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteConfig {
    /// State locations; defaults to `0, 1, 2, …` on the line.
    pub states: Option<Vec<Vec<f64>>>,
    pub pre: Vec<Vec<f64>>,
    /// Post-change transition matrix; defaults to `pre`.
    pub post: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_bandwidths")]
    pub bandwidths: Vec<f64>,
    /// Mixture weights; equal weights when omitted.
    pub weights: Option<Vec<f64>>,
}

fn default_bandwidths() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidths: default_bandwidths(),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    /// Reference set size `m` in pairs.
    #[serde(default = "default_m")]
    pub reference_len: usize,
    /// Buffer size `r` in pairs.
    #[serde(default = "default_r")]
    pub window: usize,
    /// Minimum sample `M`.
    #[serde(default = "default_min_samples")]
    pub min_samples: u32,
    /// Threshold `b` for trace runs.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_m() -> usize {
    500
}
fn default_r() -> usize {
    50
}
fn default_min_samples() -> u32 {
    10
}
fn default_threshold() -> f64 {
    5.0
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            reference_len: default_m(),
            window: default_r(),
            min_samples: default_min_samples(),
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// Maximum raw statistic over a pre-change holdout, plus margin.
    Holdout,
    /// Weak-dependence envelope from Σ values.
    Analytic,
    /// `calibration.value` as given.
    Fixed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_mode")]
    pub mode: CalibrationMode,
    /// Holdout length in observations; defaults to `r + 200`.
    pub holdout_len: Option<usize>,
    #[serde(default)]
    pub margin: f64,
    /// Σ of the reference chain; derived from the lifted chain for finite scenarios.
    pub sigma_reference: Option<f64>,
    /// Σ of the monitored chain; defaults to `sigma_reference`.
    pub sigma_window: Option<f64>,
    /// Correction for `mode = "fixed"`.
    pub value: Option<f64>,
}

fn default_mode() -> CalibrationMode {
    CalibrationMode::Holdout
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            holdout_len: None,
            margin: 0.0,
            sigma_reference: None,
            sigma_window: None,
            value: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Runs are truncated after `horizon_factor · (b + M)` statistics.
    #[serde(default = "default_horizon_factor")]
    pub horizon_factor: f64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
}

fn default_seed() -> u64 {
    1
}
fn default_replications() -> usize {
    200
}
fn default_thresholds() -> Vec<f64> {
    vec![5.0, 10.0, 20.0]
}
fn default_horizon_factor() -> f64 {
    50.0
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            replications: default_replications(),
            thresholds: default_thresholds(),
            horizon_factor: default_horizon_factor(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Svg]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

impl OutputConfig {
    pub fn svg(&self) -> bool {
        self.formats.contains(&Format::Svg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub pre_lambda: f64,
    pub pre_l: u32,
    pub post_lambda: Option<f64>,
    pub post_l: Option<u32>,
    /// MMD between the lifted stationary laws.
    pub gamma: Option<f64>,
}

/// Validated scenario, ready to simulate.
#[derive(Debug, Clone)]
pub enum Scenario {
    Ar(ArScenario),
    Finite {
        pre: FiniteChain,
        post: FiniteChain,
        tau: Option<usize>,
        length: usize,
    },
}

impl Scenario {
    pub fn tau(&self) -> Option<usize> {
        match self {
            Scenario::Ar(s) => s.tau,
            Scenario::Finite { tau, .. } => *tau,
        }
    }

    pub fn length(&self) -> usize {
        match self {
            Scenario::Ar(s) => s.length,
            Scenario::Finite { length, .. } => *length,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Scenario::Ar(s) => s.dim(),
            Scenario::Finite { pre, .. } => pre.dim(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError {
            field: "<toml>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field_err("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).with_context(|| format!("loading {}", path.display()))
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario()?;
        self.kernel()?;
        let d = &self.detector;
        if d.reference_len < 1 {
            return Err(field_err("detector.reference_len", "must be >= 1"));
        }
        if d.window < 1 {
            return Err(field_err("detector.window", "must be >= 1"));
        }
        if d.min_samples < 1 {
            return Err(field_err("detector.min_samples", "must be >= 1"));
        }
        if !(d.threshold.is_finite() && d.threshold >= 0.0) {
            return Err(field_err("detector.threshold", "must be finite and >= 0"));
        }
        let c = &self.calibration;
        if !(c.margin.is_finite() && c.margin >= 0.0) {
            return Err(field_err("calibration.margin", "must be finite and >= 0"));
        }
        let min_holdout = d.window + kcusum::detector::MIN_CALIBRATION_POSITIONS;
        if c.holdout_len.is_some_and(|h| h < min_holdout) {
            return Err(field_err(
                "calibration.holdout_len",
                format!(
                    "must be >= window + {} = {min_holdout}",
                    kcusum::detector::MIN_CALIBRATION_POSITIONS
                ),
            ));
        }
        for (name, v) in [
            ("calibration.sigma_reference", c.sigma_reference),
            ("calibration.sigma_window", c.sigma_window),
        ] {
            if v.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
                return Err(field_err(name, "must be finite and >= 0"));
            }
        }
        match (c.mode, c.value) {
            (CalibrationMode::Fixed, None) => {
                return Err(field_err(
                    "calibration.value",
                    "required when mode = \"fixed\"",
                ))
            }
            (CalibrationMode::Fixed, Some(v)) if !(v.is_finite() && v >= 0.0) => {
                return Err(field_err("calibration.value", "must be finite and >= 0"))
            }
            (CalibrationMode::Holdout | CalibrationMode::Analytic, Some(_)) => {
                return Err(field_err(
                    "calibration.value",
                    "only used when mode = \"fixed\"",
                ))
            }
            _ => {}
        }
        if c.mode == CalibrationMode::Analytic
            && c.sigma_reference.is_none()
            && self.scenario.kind == ScenarioKind::Ar
        {
            return Err(field_err(
                "calibration.sigma_reference",
                "analytic calibration of an AR scenario needs explicit sigma values",
            ));
        }
        let k = &self.campaign;
        if k.replications < 1 {
            return Err(field_err("campaign.replications", "must be >= 1"));
        }
        if k.thresholds.is_empty() {
            return Err(field_err("campaign.thresholds", "must not be empty"));
        }
        if k.thresholds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(field_err(
                "campaign.thresholds",
                "values must be finite and >= 0",
            ));
        }
        if k.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field_err(
                "campaign.thresholds",
                "must be strictly increasing",
            ));
        }
        if !(k.horizon_factor.is_finite() && k.horizon_factor >= 1.0) {
            return Err(field_err(
                "campaign.horizon_factor",
                "must be finite and >= 1",
            ));
        }
        if let Some(t) = &self.theory {
            if DoeblinParams::new(t.pre_lambda, t.pre_l).is_err() {
                return Err(field_err(
                    "theory.pre_lambda",
                    "need 0 < lambda < 1 and l >= 1",
                ));
            }
            if t.post_lambda.is_some() != t.post_l.is_some() {
                return Err(field_err(
                    "theory.post_l",
                    "post_lambda and post_l go together",
                ));
            }
            if let (Some(lam), Some(l)) = (t.post_lambda, t.post_l) {
                if DoeblinParams::new(lam, l).is_err() {
                    return Err(field_err(
                        "theory.post_lambda",
                        "need 0 < lambda < 1 and l >= 1",
                    ));
                }
            }
            if t.gamma.is_some_and(|g| !(g.is_finite() && g >= 0.0)) {
                return Err(field_err("theory.gamma", "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn holdout_len(&self) -> usize {
        self.calibration
            .holdout_len
            .unwrap_or(self.detector.window + 200)
    }

    pub fn kernel(&self) -> Result<KernelSpec, ConfigError> {
        let k = &self.kernel;
        let spec = match &k.weights {
            None => KernelSpec::uniform_mixture(&k.bandwidths),
            Some(w) => {
                if w.len() != k.bandwidths.len() {
                    return Err(field_err(
                        "kernel.weights",
                        "must match kernel.bandwidths in length",
                    ));
                }
                let comps: Vec<(f64, f64)> = w
                    .iter()
                    .copied()
                    .zip(k.bandwidths.iter().copied())
                    .collect();
                KernelSpec::mixture(&comps)
            }
        };
        spec.map_err(|e| field_err("kernel", e.to_string()))
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let s = &self.scenario;
        if s.length < 1 {
            return Err(field_err("scenario.length", "must be >= 1"));
        }
        if s.tau == Some(0) {
            return Err(field_err(
                "scenario.tau",
                "must be >= 1 (omit it for no change)",
            ));
        }
        match s.kind {
            ScenarioKind::Ar => {
                if s.finite.is_some() {
                    return Err(field_err(
                        "scenario.finite",
                        "not allowed when kind = \"ar\"",
                    ));
                }
                let ar = s.ar.clone().unwrap_or(ArConfig {
                    system: None,
                    pre_mean: zero_vector(),
                    pre_cov: pre_cov_default(),
                    post_mean: None,
                    post_cov: None,
                });
                let a = match &ar.system {
                    None => kcusum::sim::reference_system_matrix(),
                    Some(rows) => matrix_from_rows(rows, "scenario.ar.system")?,
                };
                let d = a.nrows();
                let pre_mean = vector(&ar.pre_mean, d, "scenario.ar.pre_mean")?;
                let pre_cov = matrix(&ar.pre_cov, d, "scenario.ar.pre_cov")?;
                let post_mean = match &ar.post_mean {
                    Some(v) => vector(v, d, "scenario.ar.post_mean")?,
                    None => pre_mean.clone(),
                };
                let post_cov = match &ar.post_cov {
                    Some(v) => matrix(v, d, "scenario.ar.post_cov")?,
                    None => pre_cov.clone(),
                };
                let pre_noise = GaussianNoise::new(pre_mean, pre_cov)
                    .map_err(|e| field_err("scenario.ar.pre_cov", e.to_string()))?;
                let post_noise = GaussianNoise::new(post_mean, post_cov)
                    .map_err(|e| field_err("scenario.ar.post_cov", e.to_string()))?;
                let scen = ArScenario {
                    a,
                    pre_noise,
                    post_noise,
                    tau: s.tau,
                    seed: self.campaign.seed,
                    length: s.length,
                    burn_in: s.burn_in,
                };
                scen.validate()
                    .map_err(|e| field_err("scenario.ar.system", e.to_string()))?;
                Ok(Scenario::Ar(scen))
            }
            ScenarioKind::Finite => {
                if s.ar.is_some() {
                    return Err(field_err(
                        "scenario.ar",
                        "not allowed when kind = \"finite\"",
                    ));
                }
                let f = s.finite.as_ref().ok_or_else(|| {
                    field_err("scenario.finite", "required when kind = \"finite\"")
                })?;
                let n = f.pre.len();
                let states = f
                    .states
                    .clone()
                    .unwrap_or_else(|| (0..n).map(|i| vec![i as f64]).collect());
                let pre = FiniteChain::from_rows(states.clone(), &f.pre)
                    .map_err(|e| field_err("scenario.finite.pre", e.to_string()))?;
                let post = match &f.post {
                    Some(rows) => FiniteChain::from_rows(states, rows)
                        .map_err(|e| field_err("scenario.finite.post", e.to_string()))?,
                    None => pre.clone(),
                };
                Ok(Scenario::Finite {
                    pre,
                    post,
                    tau: s.tau,
                    length: s.length,
                })
            }
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, ConfigError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(field_err(
            field,
            "rows must be nonempty and of equal length",
        ));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

fn vector(v: &VectorSpec, d: usize, field: &str) -> Result<DVector<f64>, ConfigError> {
    match v {
        VectorSpec::Scalar(x) => Ok(DVector::from_element(d, *x)),
        VectorSpec::Vector(xs) if xs.len() == d => Ok(DVector::from_vec(xs.clone())),
        VectorSpec::Vector(xs) => Err(field_err(
            field,
            format!("expected {d} entries, got {}", xs.len()),
        )),
    }
}

fn matrix(m: &MatrixSpec, d: usize, field: &str) -> Result<DMatrix<f64>, ConfigError> {
    match m {
        MatrixSpec::Scalar(x) => Ok(DMatrix::identity(d, d) * *x),
        MatrixSpec::Matrix(rows) => {
            let out = matrix_from_rows(rows, field)?;
            if out.nrows() != d || out.ncols() != d {
                return Err(field_err(field, format!("expected a {d}x{d} matrix")));
            }
            Ok(out)
        }
    }
}

/// Fails with a [`ConfigError`] unless the scenario matches the run mode.
pub(crate) fn require(cond: bool, field: &str, message: &str) -> anyhow::Result<()> {
    if !cond {
        bail!(field_err(field, message));
    }
    Ok(())
}
