use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use ehrindex::cohort::{self, load_cohort, validate, write_cohort_dir, write_cohort_jsonl, JSONL_FILE};
use ehrindex::features::build_dictionary;
use ehrindex::indexing::extract_dataset_with_stats;
use ehrindex::learner::{decision_scores, evaluate, select_c, train, TrainConfig};
use ehrindex::runner::{self, report, shipped_config, ExperimentConfig, RunOptions, SHIPPED_CONFIGS};
use ehrindex::sampling::{derive_seed, make_cv_folds};
use ehrindex::synth::{generate_cohort, scenario, SCENARIOS};
use ehrindex::{Dataset, EvalMode, FeatureDictionary, LinearModel, Outcome, TaskSpec};

const DATASET_FILE: &str = "dataset.csv";
const DICTIONARY_FILE: &str = "dictionary.txt";
const TASK_FILE: &str = "task.toml";

#[derive(Parser)]
#[command(name = "ehrindex", version, about = "Index, extract and evaluate prediction tasks on admission event streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort from a shipped scenario.
    Synth {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_admissions: Option<usize>,
        #[arg(long, value_enum, default_value_t = CohortFormat::Csv)]
        format: CohortFormat,
    },
    /// Parse and validate a cohort given as admission and event CSV files.
    Ingest {
        #[arg(long)]
        admissions: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Write the parsed cohort here as a cohort directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract a dataset for one task.
    Extract {
        /// Cohort directory or `.jsonl` file.
        #[arg(long)]
        cohort: PathBuf,
        /// TOML file holding a task spec.
        #[arg(long)]
        task: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        min_prevalence: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on an extracted dataset, choosing C by cross-validation.
    Train {
        /// Directory written by `extract`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 1.0, 10.0])]
        c_grid: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score an extracted dataset with a trained model and print its AUROC.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to patient-level for terminal outcomes, pointwise otherwise.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Write per-prediction scores as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment from a shipped config name or a config file.
    Experiment {
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Acknowledge arms evaluated on an event-anchored test scheme.
        #[arg(long)]
        allow_biased_eval: bool,
    },
    /// Render a finished run directory as a table and a plot CSV.
    Report { run_dir: PathBuf },
    /// List shipped scenarios and experiment configs.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum CohortFormat {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pointwise,
    PatientLevel,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configs that are refused or invalid, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let refused = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<ehrindex::Error>(),
            Some(ehrindex::Error::Config(_) | ehrindex::Error::Refused(_) | ehrindex::Error::InvalidTask(_))
        ) || c.downcast_ref::<toml::de::Error>().is_some()
    });
    if refused {
        2
    } else {
        1
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth {
            scenario: name,
            out,
            seed,
            n_admissions,
            format,
        } => {
            let mut config = scenario(&name)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(n) = n_admissions {
                config.n_admissions = n;
            }
            let cohort = generate_cohort(&config)?;
            match format {
                CohortFormat::Csv => write_cohort_dir(&cohort, &out)?,
                CohortFormat::Jsonl => {
                    fs::create_dir_all(&out)?;
                    write_cohort_jsonl(&cohort, BufWriter::new(File::create(out.join(JSONL_FILE))?))?;
                }
            }
            println!(
                "{} admissions, {} events written to {}",
                cohort.len(),
                cohort.n_events(),
                out.display()
            );
        }
        Command::Ingest { admissions, events, out } => {
            let cohort = cohort::ingest_cohort(
                BufReader::new(File::open(&events).with_context(|| format!("opening {}", events.display()))?),
                BufReader::new(File::open(&admissions).with_context(|| format!("opening {}", admissions.display()))?),
            )?;
            let report = validate(&cohort);
            println!("{} admissions, {} events", report.n_admissions, report.n_events);
            for w in &report.warnings {
                println!("warning: {w}");
            }
            for (id, msg) in &report.errors {
                println!("invalid: {id}: {msg}");
            }
            if !report.is_valid() {
                bail!("{} validation errors", report.errors.len());
            }
            if let Some(dir) = out {
                write_cohort_dir(&cohort, &dir)?;
            }
        }
        Command::Extract {
            cohort,
            task,
            min_prevalence,
            out,
        } => {
            let spec = read_task(&task)?;
            let cohort = load_cohort(&cohort)?;
            let dictionary = build_dictionary(&cohort, min_prevalence);
            let (dataset, stats) = extract_dataset_with_stats(&cohort, &spec, &dictionary)?;
            write_dataset(&dataset, &out)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train {
            data,
            out,
            c_grid,
            folds,
            seed,
        } => {
            let dataset = read_dataset(&data)?;
            let config = TrainConfig {
                c_grid,
                ..TrainConfig::default()
            };
            config.validate()?;
            let mut ids = dataset.admission_ids();
            ids.dedup();
            let folds = make_cv_folds(&ids, folds, derive_seed(seed, "cv", 0))?;
            let selection = select_c(&dataset, &folds, &config, default_mode(&dataset.task))?;
            let model = train(&dataset, selection.c, &config)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            model.write_json(BufWriter::new(File::create(&out)?))?;
            println!(
                "C = {} (mean validation AUROC {:?}); gradient norm {:.3e} after {} iterations",
                selection.c, selection.mean_auroc, model.diagnostics.gradient_norm, model.diagnostics.iterations
            );
        }
        Command::Evaluate { model, data, mode, out } => {
            let model = LinearModel::read_json(BufReader::new(
                File::open(&model).with_context(|| format!("opening {}", model.display()))?,
            ))?;
            let dataset = read_dataset(&data)?;
            if model.feature_names != dataset.feature_dictionary.entries() {
                bail!("model features do not match the dataset's dictionary");
            }
            let mode = match mode {
                Some(Mode::Pointwise) => EvalMode::Pointwise,
                Some(Mode::PatientLevel) => EvalMode::PatientLevel,
                None => default_mode(&dataset.task),
            };
            let scores = decision_scores(&model, &dataset.examples)?;
            if let Some(path) = out {
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["admission_id", "t_p", "label", "score"])?;
                for (ex, s) in dataset.examples.iter().zip(&scores) {
                    w.write_record([ex.admission_id.clone(), ex.t_p.to_string(), ex.label.to_string(), s.to_string()])?;
                }
                w.flush()?;
            }
            println!("auroc {:.6}", evaluate(&dataset.examples, &scores, mode)?);
        }
        Command::Experiment {
            config,
            seed,
            repeats,
            workers,
            out,
            allow_biased_eval,
        } => {
            let experiment = load_experiment(&config)?;
            let out = out
                .or_else(|| experiment.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(&experiment.name));
            let options = RunOptions {
                repeats,
                seed,
                workers,
                out_dir: Some(out.clone()),
                allow_biased_eval,
            };
            let result = runner::run_experiment(&experiment, &options);
            // a failed run still leaves its partial results on disk
            if out.join(runner::MANIFEST_FILE).is_file() {
                print!("{}", report(&out)?.table);
            }
            result?;
        }
        Command::Report { run_dir } => {
            print!("{}", report(&run_dir)?.table);
        }
        Command::List => {
            println!("scenarios:");
            for s in SCENARIOS {
                println!("  {s}");
            }
            println!("experiments:");
            for (name, _) in SHIPPED_CONFIGS {
                println!("  {name}");
            }
        }
    }
    Ok(())
}

fn default_mode(task: &TaskSpec) -> EvalMode {
    match task.outcome {
        Outcome::TerminalEvent => EvalMode::PatientLevel,
        Outcome::ThresholdEvent { .. } => EvalMode::Pointwise,
    }
}

fn load_experiment(name_or_path: &str) -> anyhow::Result<ExperimentConfig> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        return ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()));
    }
    Ok(shipped_config(name_or_path)?)
}

fn read_task(path: &Path) -> anyhow::Result<TaskSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: TaskSpec = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    spec.validate()?;
    Ok(spec)
}

fn write_dataset(dataset: &Dataset, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    dataset.write_csv(BufWriter::new(File::create(dir.join(DATASET_FILE))?))?;
    dataset
        .feature_dictionary
        .write_sidecar(BufWriter::new(File::create(dir.join(DICTIONARY_FILE))?))?;
    fs::write(dir.join(TASK_FILE), toml::to_string(&dataset.task)?)?;
    Ok(())
}

fn read_dataset(dir: &Path) -> anyhow::Result<Dataset> {
    let open = |name: &str| -> anyhow::Result<BufReader<File>> {
        let p = dir.join(name);
        Ok(BufReader::new(File::open(&p).with_context(|| format!("opening {}", p.display()))?))
    };
    let task = read_task(&dir.join(TASK_FILE))?;
    let dictionary = FeatureDictionary::read_sidecar(open(DICTIONARY_FILE)?)?;
    Ok(Dataset::read_csv(open(DATASET_FILE)?, dictionary, task)?)
}
