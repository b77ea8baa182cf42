// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV tables and the text report. Plain UTF-8, `\n` line endings, `.`
//! decimals, empty fields for undefined values.

use std::fmt::Write as _;

use crate::run::{BoundsSummary, CalibrationRecord, CampaignResult, TraceResult};

pub const TRACE_HEADER: &str = "t,state_norm,s_t,s_hat,alarm";
pub const CAMPAIGN_HEADER: &str = "b,empirical_mean,std_error,n_runs,theory_bound";
pub const DIAGNOSTICS_HEADER: &str =
    "b,horizon,truncated,false_alarms,mean_raw_delay,median_delay,mean_correction,d_r,unreliable";
pub const CALIBRATION_HEADER: &str =
    "replication,correction,holdout_max,holdout_mean,positions,analytic";

/// Shortest round-trip decimal; empty for `None` or non-finite values.
pub fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

pub fn trace_csv(res: &TraceResult) -> String {
    let mut out = String::with_capacity(res.rows.len() * 48);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in &res.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.t,
            num(Some(row.state_norm)),
            num(row.s_t),
            num(row.s_hat),
            u8::from(row.alarm)
        );
    }
    out
}

/// `t,x_0,...,x_{d-1}`.
pub fn trajectory_csv(traj: &[Vec<f64>]) -> String {
    let d = traj.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for i in 0..d {
        let _ = write!(out, ",x_{i}");
    }
    out.push('\n');
    for (t, x) in traj.iter().enumerate() {
        let _ = write!(out, "{t}");
        for &v in x {
            let _ = write!(out, ",{}", num(Some(v)));
        }
        out.push('\n');
    }
    out
}

pub fn campaign_csv(res: &CampaignResult) -> String {
    let mut out = String::from(CAMPAIGN_HEADER);
    out.push('\n');
    for row in &res.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            num(Some(row.b)),
            num(Some(row.empirical_mean)),
            num(Some(row.std_error)),
            row.n_runs,
            num(row.theory_bound)
        );
    }
    out
}

pub fn diagnostics_csv(res: &CampaignResult) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for d in &res.diagnostics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            num(Some(d.b)),
            d.horizon,
            d.truncated,
            d.false_alarms,
            num(d.mean_raw_delay),
            num(d.median_delay),
            num(Some(d.mean_correction)),
            num(d.d_r),
            u8::from(d.unreliable)
        );
    }
    out
}

pub fn calibration_csv(records: &[CalibrationRecord]) -> String {
    let mut out = String::from(CALIBRATION_HEADER);
    out.push('\n');
    for (i, c) in records.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{}",
            num(Some(c.correction)),
            num(c.holdout_max),
            num(c.holdout_mean),
            c.positions,
            num(c.analytic)
        );
    }
    out
}

/// Fixed-width table for `bounds.txt`.
pub fn bounds_text(summary: &BoundsSummary) -> String {
    let cell = |v: Option<f64>| match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => "-".to_string(),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "correction c = {} (mean over {} replications, se {})",
        cell(Some(summary.correction)),
        summary.replications,
        cell(Some(summary.std_error))
    );
    if let Some(a) = summary.analytic {
        let _ = writeln!(out, "analytic envelope = {}", cell(Some(a)));
    }
    out.push('\n');
    let cols = [
        "b",
        "sigma_pre",
        "sigma_post",
        "alpha1",
        "alpha",
        "D_r",
        "mtbfa_lower",
        "md_upper",
    ];
    let line: Vec<String> = cols.iter().map(|c| format!("{c:>14}")).collect();
    let _ = writeln!(out, "{}", line.join(""));
    for (b, r) in &summary.reports {
        let vals = [
            Some(*b),
            Some(r.sigma_pre),
            r.sigma_post,
            Some(r.alpha1),
            r.alpha,
            r.d_r,
            r.mtbfa_lower,
            r.md_upper,
        ];
        let line: Vec<String> = vals.iter().map(|v| format!("{:>14}", cell(*v))).collect();
        let _ = writeln!(out, "{}", line.join(""));
    }
    out
}

/// Parsed CSV: header names and rows with empty fields as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| anyhow::anyhow!("empty CSV"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|f| {
                    if f.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        f.parse::<f64>()
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| anyhow::anyhow!("CSV row {}: {e}", i + 1))?;
            if row.len() != header.len() {
                anyhow::bail!(
                    "CSV row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    header.len()
                );
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> anyhow::Result<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow::anyhow!("CSV has no column `{name}`"))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }
}
