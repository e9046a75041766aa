//! Extraction of supervised examples from admission event streams under
//! different indexing schemes, with a linear learner and AUROC evaluation
//! for comparing those schemes on identical splits.
//!
//! The pipeline is: [`cohort`] ingestion, [`indexing`] of prediction times
//! and labels, [`features`] over a lookback window, admission-level
//! [`sampling`], the [`learner`], and [`metrics`]. [`synth`] generates
//! cohorts with known structure and [`runner`] wires everything into
//! declarative experiments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod error;
pub mod features;
pub mod indexing;
pub mod learner;
pub mod metrics;
pub mod runner;
pub mod sampling;
pub mod synth;

pub use cohort::{Admission, Cohort, ObservationEvent, ValidationReport};
pub use error::{Error, Result};
pub use features::{FeatureDictionary, Standardizer};
pub use indexing::{AnchorScheme, Dataset, Example, Horizon, LabelOutcome, LabelPolicy, Outcome, TaskSpec};
pub use learner::{LinearModel, TrainConfig};
pub use metrics::{EvalMode, EvalReport, PredictionSet};
pub use runner::{run_experiment, ExperimentConfig, RunOptions};
pub use sampling::SplitPlan;
pub use synth::{generate_cohort, SynthConfig};
