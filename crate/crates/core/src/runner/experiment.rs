use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{load_cohort, Cohort};
use crate::error::{Error, Result};
use crate::features::{build_dictionary, FeatureDictionary};
use crate::indexing::{extract_dataset_with_stats, AnchorScheme, Dataset, ExtractionStats, TaskSpec};
use crate::learner::{decision_scores, evaluate, select_c, train};
use crate::metrics::{aggregate_repeats, EvalMode, EvalReport};
use crate::sampling::{derive_seed, make_cv_folds, make_splits, median_resample_k, subsample_per_admission, SplitAssignment};
use crate::synth::{generate_cohort, scenario, SynthConfig};

use super::config::{ExperimentConfig, MedianK, ResolvedArm, Subsample};

/// Command-line overrides of a config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    /// Worker threads for repeats; `None` uses rayon's default.
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub allow_biased_eval: bool,
}

impl RunOptions {
    /// The config with overrides folded in; this is what the manifest echoes.
    pub fn apply(&self, config: &ExperimentConfig) -> ExperimentConfig {
        let mut c = config.clone();
        if let Some(r) = self.repeats {
            c.split.n_repeats = r;
        }
        if let Some(s) = self.seed {
            c.split.seed = s;
        }
        if let Some(o) = &self.out_dir {
            c.output_dir = Some(o.clone());
        }
        if self.allow_biased_eval {
            for arm in &mut c.arms {
                arm.allow_biased_eval = true;
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub n_admissions: usize,
    pub n_examples: usize,
    pub n_positive: usize,
}

impl SplitCounts {
    fn of(ds: &Dataset) -> Self {
        let ids: HashSet<&str> = ds.admission_ids().into_iter().collect();
        Self {
            n_admissions: ids.len(),
            n_examples: ds.len(),
            n_positive: ds.n_positive(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub auroc: f64,
    pub c_selected: f64,
    pub cv_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample_seed: Option<u64>,
    pub train: SplitCounts,
    pub test: SplitCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmManifest {
    pub name: String,
    pub train_scheme: String,
    pub test_scheme: String,
    pub train_task: TaskSpec,
    pub test_task: TaskSpec,
    pub biased_eval: bool,
    /// Whole-cohort extraction counts under repeat 0's dictionary.
    pub cohort_train_extraction: ExtractionStats,
    pub cohort_test_extraction: ExtractionStats,
    pub repeats: Vec<RepeatResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortInfo {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_config: Option<SynthConfig>,
    pub n_admissions: usize,
    pub n_events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub library_version: String,
    /// `complete`, or `failed` with `error` set.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub eval_mode: EvalMode,
    pub split_seed: u64,
    pub n_repeats: usize,
    pub cohort: CohortInfo,
    pub config: ExperimentConfig,
    pub arms: Vec<ArmManifest>,
}

#[derive(Clone, Debug)]
pub struct ArmOutcome {
    pub manifest: ArmManifest,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub experiment: String,
    pub out_dir: Option<PathBuf>,
    pub arms: Vec<ArmOutcome>,
}

impl RunSummary {
    pub fn arm(&self, name: &str) -> Option<&ArmOutcome> {
        self.arms.iter().find(|a| a.manifest.name == name)
    }

    pub fn mean_auroc(&self, name: &str) -> Option<f64> {
        self.arm(name).map(|a| a.report.mean)
    }
}

pub const PER_REPEAT_FILE: &str = "per_repeat.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

pub fn load_experiment_cohort(config: &ExperimentConfig) -> Result<(Cohort, CohortInfo)> {
    if let Some(name) = &config.cohort.scenario {
        let mut synth = scenario(name)?;
        if let Some(n) = config.cohort.n_admissions {
            synth.n_admissions = n;
        }
        let cohort = generate_cohort(&synth)?;
        let info = CohortInfo {
            source: format!("scenario:{name}"),
            synth_config: Some(synth),
            n_admissions: cohort.len(),
            n_events: cohort.n_events(),
        };
        Ok((cohort, info))
    } else if let Some(path) = &config.cohort.path {
        let cohort = load_cohort(path)?;
        let info = CohortInfo {
            source: format!("path:{}", path.display()),
            synth_config: None,
            n_admissions: cohort.len(),
            n_events: cohort.n_events(),
        };
        Ok((cohort, info))
    } else {
        Err(Error::Config("cohort needs `scenario` or `path`".into()))
    }
}

/// Loads the cohort and runs every arm. Output files go to the options'
/// or the config's output directory, if any.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    let config = options.apply(config);
    config.validate(false)?;
    let (cohort, info) = load_experiment_cohort(&config)?;
    run_loaded(&config, &cohort, info, options.workers)
}

/// Runs on an already loaded cohort.
pub fn run_on_cohort(config: &ExperimentConfig, cohort: &Cohort, options: &RunOptions) -> Result<RunSummary> {
    let config = options.apply(config);
    config.validate(false)?;
    let info = CohortInfo {
        source: "in-memory".into(),
        synth_config: None,
        n_admissions: cohort.len(),
        n_events: cohort.n_events(),
    };
    run_loaded(&config, cohort, info, options.workers)
}

/// Extracted whole-cohort datasets keyed by (task, dictionary). The
/// features of an example depend only on its own admission, so restricting
/// a whole-cohort extraction to a split equals extracting the split.
struct ExtractionCache {
    /// Dictionary slot of every repeat.
    repeat_dictionary: Vec<usize>,
    tasks: Vec<TaskSpec>,
    /// `[task][dictionary]`.
    datasets: Vec<Vec<(Dataset, ExtractionStats)>>,
}

impl ExtractionCache {
    fn build(cohort: &Cohort, splits: &[SplitAssignment], arms: &[ResolvedArm], min_prevalence: f64) -> Result<Self> {
        let mut dictionaries: Vec<FeatureDictionary> = Vec::new();
        let mut repeat_dictionary = Vec::with_capacity(splits.len());
        for s in splits {
            let ids: HashSet<&str> = s.train_ids.iter().map(String::as_str).collect();
            let dict = build_dictionary(&cohort.subset(&ids), min_prevalence);
            let slot = match dictionaries.iter().position(|d| d.entries() == dict.entries()) {
                Some(i) => i,
                None => {
                    dictionaries.push(dict);
                    dictionaries.len() - 1
                }
            };
            repeat_dictionary.push(slot);
        }
        let mut tasks: Vec<TaskSpec> = Vec::new();
        for arm in arms {
            for t in [&arm.train, &arm.test] {
                if !tasks.contains(t) {
                    tasks.push(t.clone());
                }
            }
        }
        let datasets = tasks
            .iter()
            .map(|t| {
                dictionaries
                    .iter()
                    .map(|d| extract_dataset_with_stats(cohort, t, d))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            repeat_dictionary,
            tasks,
            datasets,
        })
    }

    fn get(&self, task: &TaskSpec, repeat: usize) -> &(Dataset, ExtractionStats) {
        let t = self.tasks.iter().position(|x| x == task).expect("task cached");
        &self.datasets[t][self.repeat_dictionary[repeat]]
    }
}

fn run_repeat(
    config: &ExperimentConfig,
    cohort: &Cohort,
    arm: &ResolvedArm,
    split: &SplitAssignment,
    cache: &ExtractionCache,
) -> Result<RepeatResult> {
    let r = split.repeat_index;
    let seed = config.split.seed;
    let mode = config.eval_mode();
    let train_ids: HashSet<&str> = split.train_ids.iter().map(String::as_str).collect();
    let test_ids: HashSet<&str> = split.test_ids.iter().map(String::as_str).collect();

    let mut train_set = cache.get(&arm.train, r).0.restrict(&train_ids);
    let (mut subsample_k, mut subsample_seed) = (None, None);
    if let Some(sub) = arm.subsample {
        let k = match sub {
            Subsample::Fixed(k) => k,
            Subsample::Named(MedianK::Median) => match arm.train.anchor {
                AnchorScheme::AdmissionAnchored {
                    first_offset_hours,
                    repeat_interval_hours: Some(step),
                } => median_resample_k(&cohort.subset(&train_ids), first_offset_hours, step)?,
                _ => return Err(Error::Config("median subsampling needs a rolling train scheme".into())),
            },
        };
        let s = derive_seed(seed, "subsample", r as u64);
        train_set = subsample_per_admission(&train_set, k, s)?;
        subsample_k = Some(k);
        subsample_seed = Some(s);
    }
    if train_set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }

    let cv_seed = derive_seed(seed, "cv", r as u64);
    let mut with_examples: Vec<&str> = train_set.admission_ids();
    with_examples.dedup();
    let folds = make_cv_folds(&with_examples, config.split.n_cv_folds, cv_seed)?;
    let selection = select_c(&train_set, &folds, &config.train, mode)?;
    let model = train(&train_set, selection.c, &config.train)?;

    let test_set = cache.get(&arm.test, r).0.restrict(&test_ids);
    let scores = decision_scores(&model, &test_set.examples)?;
    let auroc = evaluate(&test_set.examples, &scores, mode)?;
    Ok(RepeatResult {
        repeat: r,
        auroc,
        c_selected: selection.c,
        cv_seed,
        subsample_k,
        subsample_seed,
        train: SplitCounts::of(&train_set),
        test: SplitCounts::of(&test_set),
    })
}

fn run_arm(
    config: &ExperimentConfig,
    cohort: &Cohort,
    arm: &ResolvedArm,
    splits: &[SplitAssignment],
    cache: &ExtractionCache,
    pool: &rayon::ThreadPool,
) -> Result<ArmOutcome> {
    let results: Vec<Result<RepeatResult>> =
        pool.install(|| splits.par_iter().map(|s| run_repeat(config, cohort, arm, s, cache)).collect());
    let repeats = results
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::ArmFailed {
            arm: arm.name.clone(),
            source: Box::new(e),
        })?;
    let aurocs: Vec<f64> = repeats.iter().map(|r| r.auroc).collect();
    let mut report = aggregate_repeats(&aurocs)?;
    report.metadata.insert("arm".into(), arm.name.clone());
    report.metadata.insert("train_scheme".into(), arm.train.anchor.name());
    report.metadata.insert("test_scheme".into(), arm.test.anchor.name());
    Ok(ArmOutcome {
        manifest: ArmManifest {
            name: arm.name.clone(),
            train_scheme: arm.train.anchor.name(),
            test_scheme: arm.test.anchor.name(),
            train_task: arm.train.clone(),
            test_task: arm.test.clone(),
            biased_eval: arm.biased_eval,
            cohort_train_extraction: cache.get(&arm.train, 0).1.clone(),
            cohort_test_extraction: cache.get(&arm.test, 0).1.clone(),
            repeats,
        },
        report,
    })
}

fn run_loaded(config: &ExperimentConfig, cohort: &Cohort, info: CohortInfo, workers: Option<usize>) -> Result<RunSummary> {
    let arms = config.resolve_arms();
    let ids = cohort.ids();
    let splits = make_splits(&ids, &config.split)?;
    let cache = ExtractionCache::build(cohort, &splits, &arms, config.min_prevalence)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let out_dir = config.output_dir.clone();
    let mut outcomes: Vec<ArmOutcome> = Vec::new();
    let mut failure: Option<Error> = None;
    for arm in &arms {
        match run_arm(config, cohort, arm, &splits, &cache, &pool) {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let manifest = Manifest {
        experiment: config.name.clone(),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        status: if failure.is_some() { "failed" } else { "complete" }.to_string(),
        error: failure.as_ref().map(|e| e.to_string()),
        note: config.note.clone(),
        eval_mode: config.eval_mode(),
        split_seed: config.split.seed,
        n_repeats: config.split.n_repeats,
        cohort: info,
        config: config.clone(),
        arms: outcomes.iter().map(|o| o.manifest.clone()).collect(),
    };
    if let Some(dir) = &out_dir {
        write_run(dir, &manifest, &outcomes)?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunSummary {
        experiment: config.name.clone(),
        out_dir,
        arms: outcomes,
    })
}

fn write_run(dir: &Path, manifest: &Manifest, outcomes: &[ArmOutcome]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut per_repeat = csv::Writer::from_path(dir.join(PER_REPEAT_FILE))?;
    per_repeat.write_record([
        "experiment",
        "arm",
        "repeat",
        "auroc",
        "c_selected",
        "n_train_examples",
        "n_train_positive",
        "n_test_examples",
        "n_test_positive",
    ])?;
    for o in outcomes {
        for r in &o.manifest.repeats {
            per_repeat.write_record([
                manifest.experiment.clone(),
                o.manifest.name.clone(),
                r.repeat.to_string(),
                r.auroc.to_string(),
                r.c_selected.to_string(),
                r.train.n_examples.to_string(),
                r.train.n_positive.to_string(),
                r.test.n_examples.to_string(),
                r.test.n_positive.to_string(),
            ])?;
        }
    }
    per_repeat.flush()?;

    let mut summary = csv::Writer::from_path(dir.join(SUMMARY_FILE))?;
    summary.write_record(["experiment", "arm", "train_scheme", "test_scheme", "biased_eval", "mean", "std", "n"])?;
    for o in outcomes {
        summary.write_record([
            manifest.experiment.clone(),
            o.manifest.name.clone(),
            o.manifest.train_scheme.clone(),
            o.manifest.test_scheme.clone(),
            o.manifest.biased_eval.to_string(),
            o.report.mean.to_string(),
            o.report.std.to_string(),
            o.report.n_repeats.to_string(),
        ])?;
    }
    summary.flush()?;

    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    fs::write(dir.join(CONFIG_FILE), manifest.config.to_toml_string()?)?;
    Ok(())
}
