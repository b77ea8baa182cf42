// SPDX-License-Identifier: MIT OR Apache-2.0

//! Subcommands: run an experiment and write its files.

use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::config::ExperimentConfig;
use crate::output;
use crate::plot;
use crate::run::{self, Experiment, ReliabilityError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Trace,
    Mtbfa,
    Md,
    Bounds,
    Calibrate,
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.campaign.seed = s;
        }
        if let Some(r) = self.replications {
            cfg.campaign.replications = r;
        }
        if let Some(t) = self.threads {
            cfg.campaign.threads = t;
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
    /// Set when a campaign row is flagged unreliable.
    pub reliability_failure: Option<String>,
}

fn write(dir: &Path, name: &str, text: &str, files: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    files.push(path);
    Ok(())
}

pub fn execute(
    cmd: Command,
    mut cfg: ExperimentConfig,
    overrides: &Overrides,
) -> anyhow::Result<Report> {
    overrides.apply(&mut cfg);
    let exp = Experiment::new(cfg)?;
    let dir = exp.cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let svg = exp.cfg.output.svg();
    let mut rep = Report::default();

    match cmd {
        Command::Trace => {
            let res = run::run_trace(&exp)?;
            let csv = output::trace_csv(&res);
            write(&dir, "trace.csv", &csv, &mut rep.files)?;
            write(
                &dir,
                "trajectory.csv",
                &output::trajectory_csv(&res.trajectory),
                &mut rep.files,
            )?;
            if svg {
                let s = plot::trace_svg(&csv, res.tau, res.threshold)?;
                write(&dir, "trace.svg", &s, &mut rep.files)?;
            }
            rep.summary
                .push(format!("correction c = {}", res.calibration.correction));
            rep.summary.push(match res.alarm_at {
                Some(t) => format!("first alarm at t = {t}"),
                None => "no alarm".to_string(),
            });
            rep.warnings.extend(res.notice);
        }
        Command::Mtbfa | Command::Md => {
            let (res, title, y) = if cmd == Command::Mtbfa {
                (
                    run::run_mtbfa(&exp)?,
                    "mean time between false alarms",
                    "MTBFA (statistics)",
                )
            } else {
                (
                    run::run_md(&exp)?,
                    "mean detection delay",
                    "delay (statistics)",
                )
            };
            let csv = output::campaign_csv(&res);
            write(&dir, "campaign.csv", &csv, &mut rep.files)?;
            write(
                &dir,
                "campaign_diagnostics.csv",
                &output::diagnostics_csv(&res),
                &mut rep.files,
            )?;
            if svg {
                write(
                    &dir,
                    "campaign.svg",
                    &plot::campaign_svg(&csv, title, y)?,
                    &mut rep.files,
                )?;
            }
            for row in &res.rows {
                rep.summary.push(format!(
                    "b = {}: mean {:.3} (se {:.3}, n = {}), bound {}",
                    row.b,
                    row.empirical_mean,
                    row.std_error,
                    row.n_runs,
                    row.theory_bound
                        .map_or("-".to_string(), |v| format!("{v:.3}"))
                ));
            }
            rep.warnings.extend(res.warnings.iter().cloned());
            let bad = res.unreliable_rows();
            if !bad.is_empty() {
                rep.reliability_failure = Some(format!("unreliable rows at b = {bad:?}"));
            }
        }
        Command::Bounds => {
            let summary = run::run_bounds(&exp)?;
            let text = output::bounds_text(&summary);
            write(&dir, "bounds.txt", &text, &mut rep.files)?;
            rep.summary.extend(text.lines().map(str::to_string));
        }
        Command::Calibrate => {
            let records = run::run_calibrate(&exp)?;
            write(
                &dir,
                "calibration.csv",
                &output::calibration_csv(&records),
                &mut rep.files,
            )?;
            let cs: Vec<f64> = records.iter().map(|r| r.correction).collect();
            let (mean, se) = run::mean_and_se(&cs);
            rep.summary.push(format!(
                "correction over {} replications: mean {mean:.6} (se {se:.6})",
                records.len()
            ));
        }
    }
    Ok(rep)
}

/// Exit code for an error: 2 for reliability failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<ReliabilityError>()) {
        2
    } else {
        1
    }
}
