//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "fig2-mortality"
//! note = "optional text printed under the report table"
//!
//! [cohort]
//! scenario = "mortality-bias"   # or: path = "data/cohort"
//! n_admissions = 2000           # scenario only
//!
//! [task]                        # base task; arms override parts of it
//! outcome = { kind = "terminal_event" }
//! anchor = { kind = "admission_anchored", first_offset_hours = 12.0 }
//! horizon = { kind = "remainder_of_admission" }
//!
//! [split]                       # seed, n_repeats, test_fraction, n_cv_folds
//! [train]                       # c_grid, max_iterations, tolerance
//!
//! [[arms]]
//! name = "adm/adm"
//! [arms.train]                  # anchor, horizon, lookback_hours, label_policy
//! [arms.test]
//! subsample = "median"          # or an integer k, on the arm
//! allow_biased_eval = false
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexing::{AnchorScheme, Horizon, LabelPolicy, Outcome, TaskSpec};
use crate::learner::TrainConfig;
use crate::metrics::EvalMode;
use crate::sampling::SplitPlan;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_admissions: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Horizon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_policy: Option<LabelPolicy>,
}

impl SchemeOverride {
    pub fn apply(&self, base: &TaskSpec) -> TaskSpec {
        let mut t = base.clone();
        if let Some(a) = self.anchor {
            t.anchor = a;
        }
        if let Some(h) = self.horizon {
            t.horizon = h;
        }
        if let Some(l) = self.lookback_hours {
            t.lookback_hours = l;
        }
        if let Some(p) = self.label_policy {
            t.label_policy = p;
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subsample {
    /// `"median"`: k from the training admissions' median stay.
    Named(MedianK),
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianK {
    Median,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    #[serde(default)]
    pub train: SchemeOverride,
    #[serde(default)]
    pub test: SchemeOverride,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<Subsample>,
    #[serde(default)]
    pub allow_biased_eval: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub cohort: CohortSource,
    pub task: TaskSpec,
    #[serde(default)]
    pub split: SplitPlan,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_min_prevalence")]
    pub min_prevalence: f64,
    pub arms: Vec<ArmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_min_prevalence() -> f64 {
    0.05
}

/// Train and test tasks of one arm after overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedArm {
    pub name: String,
    pub train: TaskSpec,
    pub test: TaskSpec,
    pub subsample: Option<Subsample>,
    pub biased_eval: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. A relative cohort path is taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        if let Some(p) = &config.cohort.path {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    config.cohort.path = Some(dir.join(p));
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Metric used for every arm: terminal outcomes are scored per
    /// admission, threshold outcomes per prediction.
    pub fn eval_mode(&self) -> EvalMode {
        match self.task.outcome {
            Outcome::TerminalEvent => EvalMode::PatientLevel,
            Outcome::ThresholdEvent { .. } => EvalMode::Pointwise,
        }
    }

    pub fn resolve_arms(&self) -> Vec<ResolvedArm> {
        self.arms
            .iter()
            .map(|a| {
                let test = a.test.apply(&self.task);
                ResolvedArm {
                    name: a.name.clone(),
                    train: a.train.apply(&self.task),
                    biased_eval: test.anchor.is_outcome_dependent(),
                    test,
                    subsample: a.subsample,
                }
            })
            .collect()
    }

    /// Checks everything that can be checked before loading data.
    /// `allow_biased_eval` acknowledges event-anchored test arms globally.
    pub fn validate(&self, allow_biased_eval: bool) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("experiment name is empty".into()));
        }
        match (&self.cohort.scenario, &self.cohort.path) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("cohort needs exactly one of `scenario` or `path`".into())),
        }
        if self.cohort.path.is_some() && self.cohort.n_admissions.is_some() {
            return Err(Error::Config("n_admissions only applies to synthetic cohorts".into()));
        }
        if !(0.0..=1.0).contains(&self.min_prevalence) {
            return Err(Error::Config("min_prevalence must be in [0, 1]".into()));
        }
        self.split.validate()?;
        self.train.validate()?;
        if self.arms.is_empty() {
            return Err(Error::Config("no arms".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for (arm, raw) in self.resolve_arms().iter().zip(&self.arms) {
            if !names.insert(arm.name.as_str()) {
                return Err(Error::Config(format!("duplicate arm name `{}`", arm.name)));
            }
            let ctx = |e: Error| Error::Config(format!("arm `{}`: {e}", arm.name));
            arm.train.validate().map_err(ctx)?;
            arm.test.validate().map_err(ctx)?;
            if arm.train.outcome != self.task.outcome || arm.test.outcome != self.task.outcome {
                return Err(Error::Config(format!("arm `{}` changes the outcome", arm.name)));
            }
            if arm.biased_eval && !(raw.allow_biased_eval || allow_biased_eval) {
                return Err(Error::Refused(format!(
                    "arm `{}` evaluates on an outcome-dependent (event-anchored) test scheme; \
                     such a test set does not correspond to any deployable use. \
                     Set `allow_biased_eval = true` on the arm or pass --allow-biased-eval",
                    arm.name
                )));
            }
            match arm.subsample {
                Some(Subsample::Fixed(0)) => {
                    return Err(Error::Config(format!("arm `{}`: subsample k must be at least 1", arm.name)))
                }
                Some(Subsample::Named(MedianK::Median))
                    if !matches!(
                        arm.train.anchor,
                        AnchorScheme::AdmissionAnchored {
                            repeat_interval_hours: Some(_),
                            ..
                        }
                    ) =>
                {
                    return Err(Error::Config(format!(
                        "arm `{}`: median subsampling needs a rolling admission-anchored train scheme",
                        arm.name
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
