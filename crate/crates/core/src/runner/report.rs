//! Renders a finished run directory as a `mean (std)` table and a
//! plot-ready CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::indexing::AnchorScheme;
use crate::metrics::aggregate_repeats;

use super::experiment::{Manifest, MANIFEST_FILE, PER_REPEAT_FILE};

pub const REPORT_FILE: &str = "report.md";
pub const PLOT_FILE: &str = "plot.csv";

pub const BIASED_BANNER: &str = "NOT a clinical use case: the test set is indexed relative to the outcome";
pub const NOT_COMPARABLE_NOTE: &str =
    "On-demand and horizon-based arms extract their test sets differently; their AUROCs are not directly comparable.";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub arm: String,
    pub train_scheme: String,
    pub test_scheme: String,
    pub biased_eval: bool,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
    pub table: String,
}

#[derive(Deserialize)]
struct RepeatLine {
    arm: String,
    auroc: f64,
}

fn format_row(r: &ReportRow) -> String {
    format!("mean {:.3}, std {:.3}", r.mean, r.std)
}

/// Reads `manifest.json` and `per_repeat.csv`, aggregates each arm in
/// manifest order, and writes `report.md` and `plot.csv` next to them.
pub fn report(run_dir: &Path) -> Result<Report> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let per_repeat_path = run_dir.join(PER_REPEAT_FILE);
    for p in [&manifest_path, &per_repeat_path] {
        if !p.is_file() {
            return Err(Error::MissingRunFile(p.clone()));
        }
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let mut lines: Vec<RepeatLine> = Vec::new();
    for rec in csv::Reader::from_path(&per_repeat_path)?.deserialize() {
        lines.push(rec?);
    }

    let mut rows = Vec::new();
    for arm in &manifest.arms {
        let aurocs: Vec<f64> = lines.iter().filter(|l| l.arm == arm.name).map(|l| l.auroc).collect();
        let agg = aggregate_repeats(&aurocs).map_err(|_| Error::MissingRunFile(per_repeat_path.clone()))?;
        rows.push(ReportRow {
            arm: arm.name.clone(),
            train_scheme: arm.train_scheme.clone(),
            test_scheme: arm.test_scheme.clone(),
            biased_eval: arm.biased_eval,
            mean: agg.mean,
            std: agg.std,
            n: agg.n_repeats,
        });
    }

    let mut notes = Vec::new();
    if let Some(n) = &manifest.note {
        notes.push(n.clone());
    }
    let on_demand = manifest
        .arms
        .iter()
        .filter(|a| a.test_task.anchor == AnchorScheme::OnDemand)
        .count();
    if on_demand > 0 && on_demand < manifest.arms.len() && !notes.iter().any(|n| n == NOT_COMPARABLE_NOTE) {
        notes.push(NOT_COMPARABLE_NOTE.to_string());
    }
    if manifest.status != "complete" {
        notes.push(format!(
            "Run incomplete: {}",
            manifest.error.as_deref().unwrap_or("unknown error")
        ));
    }

    let mut table = String::new();
    let _ = writeln!(table, "# {}\n", manifest.experiment);
    let _ = writeln!(table, "AUROC as mean (std) over repeats; std is the population standard deviation.\n");
    let _ = writeln!(table, "| arm | train | test | AUROC | repeats |");
    let _ = writeln!(table, "|---|---|---|---|---|");
    for r in &rows {
        let flag = if r.biased_eval { " [biased]" } else { "" };
        let _ = writeln!(
            table,
            "| {}{} | {} | {} | {:.3} ({:.3}) | {} |",
            r.arm, flag, r.train_scheme, r.test_scheme, r.mean, r.std, r.n
        );
    }
    if rows.iter().any(|r| r.biased_eval) {
        let _ = writeln!(table, "\n[biased] {BIASED_BANNER}.");
    }
    for n in &notes {
        let _ = writeln!(table, "\nNote: {n}");
    }
    fs::write(run_dir.join(REPORT_FILE), &table)?;

    let mut plot = csv::Writer::from_path(run_dir.join(PLOT_FILE))?;
    plot.write_record(["arm", "mean", "std", "lower", "upper", "biased_eval"])?;
    for r in &rows {
        plot.write_record([
            r.arm.clone(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std),
            format!("{:.6}", r.mean - r.std),
            format!("{:.6}", r.mean + r.std),
            r.biased_eval.to_string(),
        ])?;
    }
    plot.flush()?;

    Ok(Report {
        experiment: manifest.experiment,
        rows,
        notes,
        table,
    })
}

impl Report {
    pub fn summary_line(&self, arm: &str) -> Option<String> {
        self.rows.iter().find(|r| r.arm == arm).map(format_row)
    }
}
