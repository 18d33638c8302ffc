use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fedpoison_core::engine::{assemble_report, run_trial, ExperimentData};
use fedpoison_core::{ExperimentConfig, MetricsReport};
use rayon::prelude::*;

use crate::config::{cells, SweepSpec};
use crate::report::write_reports;

pub const SUMMARY_FILE: &str = "summary.csv";

/// Rayon pool with `threads` workers; 0 picks one per core.
pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the worker pool")
}

/// Trials of one experiment, run in parallel and reported in trial order.
pub fn run_config(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let data = ExperimentData::load(config)?;
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, &data, t))
        .collect::<fedpoison_core::Result<Vec<_>>>()?;
    Ok(assemble_report(config, trials))
}

pub struct SweepCell {
    pub labels: Vec<String>,
    pub report: MetricsReport,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    let grid = cells(spec).map_err(anyhow::Error::msg)?;
    grid.into_par_iter()
        .map(|(labels, cfg)| {
            let report = run_config(&cfg).with_context(|| format!("sweep cell {}", labels.join(",")))?;
            Ok(SweepCell { labels, report })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per cell: axis values, then the trial-averaged final metrics.
pub fn summary_csv(spec: &SweepSpec, cells: &[SweepCell]) -> String {
    let mut out = String::new();
    for axis in &spec.axes {
        out.push_str(&axis.path);
        out.push(',');
    }
    out.push_str("final_error_rate,final_attacker_accuracy,final_test_loss,success_rate,attack_mean_seconds\n");
    for c in cells {
        let r = &c.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.labels.join(","),
            opt(r.final_error_rate),
            opt(r.final_attacker_accuracy),
            r.final_test_loss,
            opt(r.success_rate),
            r.timing.mean_seconds
        );
    }
    out
}

/// `summary.csv` plus a report directory per cell, written by the caller's
/// thread after all cells finish.
pub fn write_sweep(dir: &Path, spec: &SweepSpec, cells: &[SweepCell]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, c) in cells.iter().enumerate() {
        write_reports(&dir.join(format!("cell-{i:03}")), &c.report)?;
    }
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary_csv(spec, cells)).with_context(|| format!("writing {}", path.display()))
}
