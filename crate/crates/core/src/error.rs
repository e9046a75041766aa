use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file} line {line}: {message}")]
    Parse {
        file: &'static str,
        line: u64,
        message: String,
    },

    #[error("invalid task spec: {0}")]
    InvalidTask(String),

    #[error("feature dictionary is empty")]
    EmptyDictionary,

    #[error("variable `{0}` is not in the cohort dictionary")]
    UnknownVariable(String),

    #[error("feature vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("non-finite feature value in example {index}")]
    NonFiniteFeature { index: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("AUROC is undefined: {positives} positives, {negatives} negatives")]
    UndefinedAuroc { positives: usize, negatives: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("admission `{0}` has predictions with different labels")]
    InconsistentLabels(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("not enough admissions: {0}")]
    TooFewAdmissions(String),

    #[error("invalid sampling request: {0}")]
    InvalidSampling(String),

    #[error("unknown scenario `{0}`")]
    ScenarioNotFound(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// The config is well-formed but asks for something the runner refuses to do.
    #[error("config refused: {0}")]
    Refused(String),

    #[error("arm `{arm}` failed: {source}")]
    ArmFailed { arm: String, source: Box<Error> },

    #[error("missing run file {0}")]
    MissingRunFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
