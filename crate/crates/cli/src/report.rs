use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fedpoison_core::engine::AttackTiming;
use fedpoison_core::MetricsReport;

pub const REPORT_FILE: &str = "report.json";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const TIMING_FILE: &str = "timing.json";

/// `trial,round,metric,value` rows. `{}` on `f64` prints the shortest
/// decimal that parses back to the same bits.
pub fn rounds_csv(report: &MetricsReport) -> String {
    let mut out = String::from("trial,round,metric,value\n");
    for trial in &report.trials {
        for r in &trial.rounds {
            if let Some(id) = r.selected_id {
                let _ = writeln!(out, "{},{},selected_id,{}", trial.trial, r.round, id);
            }
            for (name, value) in &r.metrics {
                let _ = writeln!(out, "{},{},{},{}", trial.trial, r.round, name, value);
            }
        }
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Writes the JSON summary and per-round CSV, plus wall-clock timing in a
/// separate file so the other two stay reproducible.
pub fn write_reports(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join(REPORT_FILE), &(serde_json::to_string_pretty(report)? + "\n"))?;
    write(&dir.join(ROUNDS_FILE), &rounds_csv(report))?;
    write(&dir.join(TIMING_FILE), &(serde_json::to_string_pretty(&report.timing)? + "\n"))?;
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<MetricsReport> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut report: MetricsReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let timing = dir.join(TIMING_FILE);
    if timing.exists() {
        let text = fs::read_to_string(&timing)?;
        report.timing = serde_json::from_str::<AttackTiming>(&text)?;
    }
    Ok(report)
}
