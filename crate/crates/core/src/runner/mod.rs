//! Declarative experiments: config, execution over repeated splits, and
//! reports.

mod config;
mod experiment;
mod report;

pub use config::{ArmConfig, CohortSource, ExperimentConfig, MedianK, ResolvedArm, SchemeOverride, Subsample};
pub use experiment::{
    load_experiment_cohort, run_experiment, run_on_cohort, ArmManifest, ArmOutcome, CohortInfo, Manifest,
    RepeatResult, RunOptions, RunSummary, SplitCounts, CONFIG_FILE, MANIFEST_FILE, PER_REPEAT_FILE, SUMMARY_FILE,
};
pub use report::{report, Report, ReportRow, BIASED_BANNER, NOT_COMPARABLE_NOTE, PLOT_FILE, REPORT_FILE};

use crate::error::{Error, Result};

/// Configs shipped with the library, by name.
pub const SHIPPED_CONFIGS: [(&str, &str); 6] = [
    ("fig2-mortality", include_str!("../../configs/fig2-mortality.toml")),
    ("fig2-hypokalemia", include_str!("../../configs/fig2-hypokalemia.toml")),
    ("fig2-multiple-mortality", include_str!("../../configs/fig2-multiple-mortality.toml")),
    ("table3-subsample", include_str!("../../configs/table3-subsample.toml")),
    ("table4-single-vs-rolling", include_str!("../../configs/table4-single-vs-rolling.toml")),
    ("table5-on-demand", include_str!("../../configs/table5-on-demand.toml")),
];

pub fn shipped_config(name: &str) -> Result<ExperimentConfig> {
    SHIPPED_CONFIGS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("no shipped config named `{name}`")))
        .and_then(|(_, text)| ExperimentConfig::from_toml_str(text))
}
