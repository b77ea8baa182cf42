// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form performance calculators driven by Doeblin minorization
//! coefficients `(λ, l)`: `P^l(x, ·) ≥ λ φ(·)` for every state `x`.
//!
//! The false-alarm and delay bounds are leading-order: their `(1 + o(1))`
//! factors are dropped.

use crate::error::{Error, Result};

/// Doeblin minorization coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoeblinParams {
    lambda: f64,
    l: u32,
}

impl DoeblinParams {
    pub fn new(lambda: f64, l: u32) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid(format!(
                "Doeblin lambda must lie in (0, 1); got {lambda}"
            )));
        }
        if l == 0 {
            return Err(Error::invalid("Doeblin step count l must be >= 1"));
        }
        Ok(Self { lambda, l })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    /// Hoeffding scale `2(l + 1)/λ` for a function bounded by one.
    pub fn hoeffding_scale(&self) -> f64 {
        2.0 * (f64::from(self.l) + 1.0) / self.lambda
    }
}

/// Summed-autocovariance bound `Σ = 4 / ((1 − λ)(1 − (1 − λ)^{1/l}))`.
pub fn sigma_from_doeblin(p: DoeblinParams) -> f64 {
    let q = 1.0 - p.lambda;
    4.0 / (q * (1.0 - q.powf(1.0 / f64::from(p.l))))
}

/// Envelope `4(1 − λ)^{t/l − 1}` of the lag-`t` RKHS autocovariance.
pub fn rho_envelope(p: DoeblinParams, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("lag t must be >= 1"));
    }
    let q = 1.0 - p.lambda;
    Ok(4.0 * q.powf(t as f64 / f64::from(p.l) - 1.0))
}

/// Hoeffding tail for uniformly ergodic chains:
/// `P(|S_n − E S_n| ≥ nε) ≤ min(1, 2·exp(−2(nε − μ)²/(nμ²)))`,
/// with `μ = 2(l + 1)‖f‖/λ`. Requires `n > μ/ε`.
pub fn hoeffding_tail(norm_f: f64, p: DoeblinParams, n: u64, eps: f64) -> Result<f64> {
    if !(norm_f.is_finite() && norm_f > 0.0) {
        return Err(Error::invalid(format!(
            "sup-norm must be finite and > 0; got {norm_f}"
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!(
            "eps must be finite and > 0; got {eps}"
        )));
    }
    let mu = p.hoeffding_scale() * norm_f;
    let n_f = n as f64;
    if n_f * eps <= mu {
        let min_valid_n = (mu / eps).floor() as u64 + 1;
        return Err(Error::Precondition {
            message: format!("need n > mu/eps = {}; got n = {n}", mu / eps),
            min_valid_n: Some(min_valid_n),
        });
    }
    let dev = n_f * eps - mu;
    Ok((2.0 * (-2.0 * dev * dev / (n_f * mu * mu)).exp()).min(1.0))
}

/// Leading-order lower bound on the mean time between false alarms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtbfaBound {
    pub alpha1: f64,
    pub value: f64,
}

/// `M − 1 + (b − α₁)` with `α₁ = 2(l + 1)/λ` taken from the lifted pre-change chain.
///
/// `b = α₁` is accepted and returns the degenerate `M − 1`.
pub fn mtbfa_lower_bound(b: f64, min_samples: u32, p_lifted: DoeblinParams) -> Result<MtbfaBound> {
    check_threshold(b)?;
    check_min_samples(min_samples)?;
    let alpha1 = p_lifted.hoeffding_scale();
    if b < alpha1 {
        return Err(Error::BoundNotInformative { b, alpha1 });
    }
    Ok(MtbfaBound {
        alpha1,
        value: f64::from(min_samples) - 1.0 + (b - alpha1),
    })
}

/// Leading-order upper bound on the mean detection delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdBound {
    pub alpha: f64,
    /// Drift margin `γ − 2c`.
    pub d_r: f64,
    pub value: f64,
}

/// `max{M, (b + α)/D_r}` with `D_r = γ − 2c` and `α = 2(l + 1)/λ` of the
/// lifted post-change chain.
pub fn md_upper_bound(
    b: f64,
    min_samples: u32,
    gamma_pq: f64,
    c_corr: f64,
    q_lifted: DoeblinParams,
) -> Result<MdBound> {
    check_threshold(b)?;
    check_min_samples(min_samples)?;
    if !(gamma_pq.is_finite() && gamma_pq >= 0.0) {
        return Err(Error::invalid(format!(
            "MMD gamma must be finite and >= 0; got {gamma_pq}"
        )));
    }
    if !(c_corr.is_finite() && c_corr >= 0.0) {
        return Err(Error::invalid(format!(
            "correction constant must be finite and >= 0; got {c_corr}"
        )));
    }
    let d_r = gamma_pq - 2.0 * c_corr;
    if d_r <= 0.0 {
        return Err(Error::ChangeNotDetectable { d_r });
    }
    let alpha = q_lifted.hoeffding_scale();
    Ok(MdBound {
        alpha,
        d_r,
        value: f64::from(min_samples).max((b + alpha) / d_r),
    })
}

fn check_threshold(b: f64) -> Result<()> {
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::invalid(format!(
            "threshold b must be finite and >= 0; got {b}"
        )));
    }
    Ok(())
}

fn check_min_samples(m: u32) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("minimum sample M must be >= 1"));
    }
    Ok(())
}

/// Every analytic quantity for one detector configuration, for tabular output.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub sigma_pre: f64,
    pub sigma_post: Option<f64>,
    pub correction: f64,
    pub alpha1: f64,
    pub alpha: Option<f64>,
    pub d_r: Option<f64>,
    pub mtbfa_lower: Option<f64>,
    pub md_upper: Option<f64>,
}

impl BoundReport {
    /// Assembles the report. `post` carries the lifted post-change chain's
    /// coefficients and the exact MMD between the lifted stationary laws.
    pub fn build(
        b: f64,
        min_samples: u32,
        correction: f64,
        pre: DoeblinParams,
        post: Option<(DoeblinParams, f64)>,
    ) -> Result<Self> {
        let mtbfa = match mtbfa_lower_bound(b, min_samples, pre) {
            Ok(v) => Some(v.value),
            Err(Error::BoundNotInformative { .. }) => None,
            Err(e) => return Err(e),
        };
        let (sigma_post, alpha, d_r, md_upper) = match post {
            Some((q, gamma)) => {
                let alpha = q.hoeffding_scale();
                let d_r = gamma - 2.0 * correction;
                let md = match md_upper_bound(b, min_samples, gamma, correction, q) {
                    Ok(v) => Some(v.value),
                    Err(Error::ChangeNotDetectable { .. }) => None,
                    Err(e) => return Err(e),
                };
                (Some(sigma_from_doeblin(q)), Some(alpha), Some(d_r), md)
            }
            None => (None, None, None, None),
        };
        Ok(Self {
            sigma_pre: sigma_from_doeblin(pre),
            sigma_post,
            correction,
            alpha1: pre.hoeffding_scale(),
            alpha,
            d_r,
            mtbfa_lower: mtbfa,
            md_upper,
        })
    }
}
