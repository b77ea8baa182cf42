// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kcusum_harness::{execute, exit_code, Command, ExperimentConfig, Overrides};

/// Kernel CUSUM change detection experiments.
#[derive(Debug, Parser)]
#[command(name = "kcusum", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides `campaign.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `campaign.replications`.
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Worker threads (0 = all cores); overrides `campaign.threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// One monitored run: trace.csv, trajectory.csv, trace.svg.
    Trace,
    /// False-alarm campaign without a change: campaign.csv.
    Mtbfa,
    /// Detection-delay campaign with a change: campaign.csv.
    Md,
    /// Closed-form bounds per threshold: bounds.txt.
    Bounds,
    /// Calibrated correction per replication: calibration.csv.
    Calibrate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(1);
    };
    let command = match cli.command {
        Cmd::Trace => Command::Trace,
        Cmd::Mtbfa => Command::Mtbfa,
        Cmd::Md => Command::Md,
        Cmd::Bounds => Command::Bounds,
        Cmd::Calibrate => Command::Calibrate,
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        replications: cli.replications,
        threads: cli.threads,
    };
    let result = ExperimentConfig::load(path).and_then(|cfg| execute(command, cfg, &overrides));
    match result {
        Ok(report) => {
            for line in &report.summary {
                println!("{line}");
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            if let Some(msg) = report.reliability_failure {
                eprintln!("error: campaign reliability failure: {msg}");
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
