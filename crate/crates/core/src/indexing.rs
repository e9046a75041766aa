//! Prediction-time generation, horizon labeling and example assembly.
//!
//! Window conventions: the feature lookback is `(t_p - lookback, t_p]` and
//! the horizon is `(t_p, t_p + h]`. On-demand tasks use an open lookback
//! `(t_p - lookback, t_p)` so the measurement being predicted never feeds
//! its own features.

use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Admission, Cohort};
use crate::error::{Error, Result};
use crate::features::{FeatureDictionary, SeriesIndex};

/// Reference point and cadence of predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnchorScheme {
    /// Relative to the start of the admission.
    AdmissionAnchored {
        first_offset_hours: f64,
        #[serde(default)]
        repeat_interval_hours: Option<f64>,
    },
    /// Relative to the outcome: end of stay for terminal outcomes, each
    /// outcome measurement for threshold outcomes.
    EventAnchored {
        lead_hours: f64,
        #[serde(default)]
        repeat_interval_hours: Option<f64>,
    },
    /// At every outcome measurement.
    OnDemand,
}

impl AnchorScheme {
    pub fn is_outcome_dependent(&self) -> bool {
        matches!(self, AnchorScheme::EventAnchored { .. })
    }

    pub fn is_rolling(&self) -> bool {
        match self {
            AnchorScheme::AdmissionAnchored {
                repeat_interval_hours,
                ..
            }
            | AnchorScheme::EventAnchored {
                repeat_interval_hours,
                ..
            } => repeat_interval_hours.is_some(),
            AnchorScheme::OnDemand => true,
        }
    }

    pub fn name(&self) -> String {
        match self {
            AnchorScheme::AdmissionAnchored {
                first_offset_hours,
                repeat_interval_hours: None,
            } => format!("admission+{first_offset_hours}h"),
            AnchorScheme::AdmissionAnchored {
                first_offset_hours,
                repeat_interval_hours: Some(i),
            } => format!("admission+{first_offset_hours}h/every {i}h"),
            AnchorScheme::EventAnchored {
                lead_hours,
                repeat_interval_hours: None,
            } => format!("event-{lead_hours}h"),
            AnchorScheme::EventAnchored {
                lead_hours,
                repeat_interval_hours: Some(i),
            } => format!("event-{lead_hours}h/every {i}h"),
            AnchorScheme::OnDemand => "on-demand".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Horizon {
    Fixed { hours: f64 },
    RemainderOfAdmission,
    /// Zero-length horizon of on-demand estimation.
    Immediate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Below,
    Above,
}

impl Direction {
    pub fn satisfied(self, value: f64, threshold: f64) -> bool {
        match self {
            Direction::Below => value < threshold,
            Direction::Above => value > threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Outcome {
    /// Single end-of-stay outcome (in-hospital death).
    TerminalEvent,
    /// Positive when a measurement of `variable` crosses `threshold`.
    ThresholdEvent {
        variable: String,
        threshold: f64,
        direction: Direction,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// Copy-and-hold the latest earlier measurement when the horizon is empty.
    #[default]
    ObservedOrHold,
    ObservedOnly,
}

fn default_lookback() -> f64 {
    12.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub outcome: Outcome,
    pub anchor: AnchorScheme,
    pub horizon: Horizon,
    #[serde(default = "default_lookback")]
    pub lookback_hours: f64,
    #[serde(default)]
    pub label_policy: LabelPolicy,
}

impl TaskSpec {
    pub fn mortality(anchor: AnchorScheme) -> Self {
        Self {
            outcome: Outcome::TerminalEvent,
            anchor,
            horizon: Horizon::RemainderOfAdmission,
            lookback_hours: 12.0,
            label_policy: LabelPolicy::ObservedOrHold,
        }
    }

    /// `variable < threshold` within the next `horizon_hours`.
    pub fn below_threshold(variable: &str, threshold: f64, anchor: AnchorScheme, horizon_hours: f64) -> Self {
        let horizon = if anchor == AnchorScheme::OnDemand {
            Horizon::Immediate
        } else {
            Horizon::Fixed {
                hours: horizon_hours,
            }
        };
        Self {
            outcome: Outcome::ThresholdEvent {
                variable: variable.into(),
                threshold,
                direction: Direction::Below,
            },
            anchor,
            horizon,
            lookback_hours: 12.0,
            label_policy: LabelPolicy::ObservedOrHold,
        }
    }

    pub fn outcome_variable(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::ThresholdEvent { variable, .. } => Some(variable),
            Outcome::TerminalEvent => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTask(m.to_string()));
        if !(self.lookback_hours.is_finite() && self.lookback_hours > 0.0) {
            return bad("lookback_hours must be positive");
        }
        match self.anchor {
            AnchorScheme::AdmissionAnchored {
                first_offset_hours: o,
                repeat_interval_hours: i,
            }
            | AnchorScheme::EventAnchored {
                lead_hours: o,
                repeat_interval_hours: i,
            } => {
                if !(o.is_finite() && o >= 0.0) {
                    return bad("anchor offset must be non-negative");
                }
                if let Some(i) = i {
                    if !(i.is_finite() && i > 0.0) {
                        return bad("repeat_interval_hours must be positive");
                    }
                }
            }
            AnchorScheme::OnDemand => {}
        }
        if let Horizon::Fixed { hours } = self.horizon {
            if !(hours.is_finite() && hours > 0.0) {
                return bad("fixed horizon must be positive");
            }
        }
        match (&self.outcome, self.anchor, self.horizon) {
            (Outcome::TerminalEvent, AnchorScheme::OnDemand, _) => {
                bad("on-demand anchoring requires a threshold outcome")
            }
            (Outcome::TerminalEvent, _, Horizon::RemainderOfAdmission) => Ok(()),
            (Outcome::TerminalEvent, _, _) => bad("terminal outcomes use the remainder-of-admission horizon"),
            (Outcome::ThresholdEvent { threshold, .. }, anchor, horizon) => {
                if !threshold.is_finite() {
                    return bad("threshold must be finite");
                }
                match (anchor, horizon) {
                    (AnchorScheme::OnDemand, Horizon::Immediate) => Ok(()),
                    (AnchorScheme::OnDemand, _) => bad("on-demand anchoring uses the immediate horizon"),
                    (
                        AnchorScheme::EventAnchored {
                            repeat_interval_hours: Some(_),
                            ..
                        },
                        _,
                    ) => bad("rolling event-anchored indexing is defined for terminal outcomes only"),
                    (_, Horizon::Fixed { .. }) => Ok(()),
                    _ => bad("threshold outcomes need a fixed horizon"),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub admission_id: String,
    pub t_p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelOutcome {
    Label(u8),
    Dropped,
}

impl LabelOutcome {
    fn from_bool(b: bool) -> Self {
        LabelOutcome::Label(u8::from(b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub admission_id: String,
    pub t_p: f64,
    pub features: Vec<f64>,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub feature_dictionary: FeatureDictionary,
    pub task: TaskSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.examples.iter().filter(|e| e.label == 1).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn admission_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.examples
            .iter()
            .map(|e| e.admission_id.as_str())
            .filter(|id| seen.insert(*id))
            .collect()
    }

    /// Examples whose admission is in `ids`, order preserved.
    pub fn restrict(&self, ids: &HashSet<&str>) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| ids.contains(e.admission_id.as_str()))
                .cloned()
                .collect(),
            feature_dictionary: self.feature_dictionary.clone(),
            task: self.task.clone(),
        }
    }

    /// CSV `admission_id,t_p,label,f_0,...,f_{d-1}`; missing entries are `NaN`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.feature_dictionary.len();
        let mut header = vec!["admission_id".to_string(), "t_p".into(), "label".into()];
        header.extend((0..d).map(|j| format!("f_{j}")));
        w.write_record(&header)?;
        for ex in &self.examples {
            let mut row = vec![ex.admission_id.clone(), ex.t_p.to_string(), ex.label.to_string()];
            row.extend(ex.features.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, feature_dictionary: FeatureDictionary, task: TaskSpec) -> Result<Self> {
        const FILE: &str = "dataset csv";
        let d = feature_dictionary.len();
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let width = rdr.headers()?.len();
        if width != d + 3 {
            return Err(Error::Parse {
                file: FILE,
                line: 1,
                message: format!("expected {} columns for {d} features, found {width}", d + 3),
            });
        }
        let mut examples = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |m: String| Error::Parse {
                file: FILE,
                line,
                message: m,
            };
            if record.len() != d + 3 {
                return Err(bad(format!("expected {} columns, found {}", d + 3, record.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("unparseable number `{s}`")));
            let label = match &record[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("label must be 0 or 1, got `{other}`"))),
            };
            examples.push(Example {
                admission_id: record[0].to_string(),
                t_p: num(&record[1])?,
                label,
                features: record.iter().skip(3).map(num).collect::<Result<_>>()?,
            });
        }
        Ok(Self {
            examples,
            feature_dictionary,
            task,
        })
    }
}

/// Prediction times of one admission under `spec`, ascending and deduplicated.
pub fn prediction_times(admission: &Admission, spec: &TaskSpec) -> Vec<PredictionPoint> {
    raw_prediction_times(admission, spec)
        .into_iter()
        .map(|t_p| PredictionPoint {
            admission_id: admission.id.clone(),
            t_p,
        })
        .collect()
}

fn outcome_times<'a>(admission: &'a Admission, spec: &'a TaskSpec) -> impl Iterator<Item = f64> + 'a {
    let var = spec.outcome_variable();
    admission
        .events
        .iter()
        .filter(move |e| Some(e.variable.as_str()) == var)
        .map(|e| e.time)
}

fn raw_prediction_times(admission: &Admission, spec: &TaskSpec) -> Vec<f64> {
    let los = admission.los_hours;
    let mut times = match (spec.anchor, &spec.outcome) {
        (
            AnchorScheme::AdmissionAnchored {
                first_offset_hours: first,
                repeat_interval_hours,
            },
            _,
        ) => match repeat_interval_hours {
            None => {
                if first <= los {
                    vec![first]
                } else {
                    vec![]
                }
            }
            Some(step) => (0..)
                .map(|j| first + j as f64 * step)
                .take_while(|&t| t <= los)
                .collect(),
        },
        (
            AnchorScheme::EventAnchored {
                lead_hours,
                repeat_interval_hours,
            },
            Outcome::TerminalEvent,
        ) => {
            let end = los - lead_hours;
            match repeat_interval_hours {
                None => {
                    if end >= 0.0 {
                        vec![end]
                    } else {
                        vec![]
                    }
                }
                Some(step) => (0..)
                    .map(|j| end - j as f64 * step)
                    .take_while(|&t| t >= 0.0)
                    .collect(),
            }
        }
        (AnchorScheme::EventAnchored { lead_hours, .. }, Outcome::ThresholdEvent { .. }) => outcome_times(admission, spec)
            .map(|t| t - lead_hours)
            .filter(|&t| t >= 0.0)
            .collect(),
        (AnchorScheme::OnDemand, _) => outcome_times(admission, spec).collect(),
    };
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Where a label came from; used by the leakage audit.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelSource {
    /// Terminal outcome of the stay.
    EndOfStay,
    /// Outcome measurements inside the horizon window.
    Window(Vec<f64>),
    /// Copy-and-hold of the measurement at this time.
    Held(f64),
    /// Measurements at exactly `t_p` (on-demand).
    AtPrediction(Vec<f64>),
    None,
}

/// Time-sorted outcome series of one admission.
struct OutcomeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl OutcomeSeries {
    fn new(admission: &Admission, spec: &TaskSpec) -> Self {
        let var = spec.outcome_variable();
        let (times, values) = admission
            .events
            .iter()
            .filter(|e| Some(e.variable.as_str()) == var)
            .map(|e| (e.time, e.value))
            .unzip();
        Self { times, values }
    }

    fn label(&self, admission: &Admission, t_p: f64, spec: &TaskSpec) -> (LabelOutcome, LabelSource) {
        let (threshold, direction) = match &spec.outcome {
            Outcome::TerminalEvent => {
                return (LabelOutcome::from_bool(admission.died_in_hospital), LabelSource::EndOfStay);
            }
            Outcome::ThresholdEvent {
                threshold,
                direction,
                ..
            } => (*threshold, *direction),
        };
        let hit = |range: std::ops::Range<usize>| self.values[range].iter().any(|&v| direction.satisfied(v, threshold));
        let t = &self.times;
        match spec.horizon {
            Horizon::Immediate => {
                let range = t.partition_point(|&x| x < t_p)..t.partition_point(|&x| x <= t_p);
                if range.is_empty() {
                    return (LabelOutcome::Dropped, LabelSource::None);
                }
                let used = t[range.clone()].to_vec();
                (LabelOutcome::from_bool(hit(range)), LabelSource::AtPrediction(used))
            }
            Horizon::Fixed { hours } => {
                let lo = t.partition_point(|&x| x <= t_p);
                let hi = t.partition_point(|&x| x <= t_p + hours);
                if hi > lo {
                    let used = t[lo..hi].to_vec();
                    return (LabelOutcome::from_bool(hit(lo..hi)), LabelSource::Window(used));
                }
                match spec.label_policy {
                    LabelPolicy::ObservedOrHold if lo > 0 => {
                        // measurements tied at the latest time are held together
                        let latest = t[lo - 1];
                        let first = t.partition_point(|&x| x < latest);
                        (LabelOutcome::from_bool(hit(first..lo)), LabelSource::Held(latest))
                    }
                    _ => (LabelOutcome::Dropped, LabelSource::None),
                }
            }
            // rejected by TaskSpec::validate for threshold outcomes
            Horizon::RemainderOfAdmission => (LabelOutcome::Dropped, LabelSource::None),
        }
    }
}

/// Label of the prediction made at `t_p`.
pub fn label_at(admission: &Admission, t_p: f64, spec: &TaskSpec) -> LabelOutcome {
    OutcomeSeries::new(admission, spec).label(admission, t_p, spec).0
}

/// Per-extraction bookkeeping reported alongside a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub n_admissions: usize,
    pub n_admissions_without_predictions: usize,
    pub n_prediction_points: usize,
    pub n_dropped: usize,
    pub n_examples: usize,
    pub n_positive: usize,
}

/// Inputs touched while building one example.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleAudit {
    pub admission_id: String,
    pub t_p: f64,
    pub feature_input_times: Vec<f64>,
    pub label_source: LabelSource,
}

fn check_dictionary(cohort: &Cohort, dictionary: &FeatureDictionary) -> Result<()> {
    if dictionary.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let known: HashSet<&str> = cohort.variable_dictionary.iter().map(String::as_str).collect();
    if let Some(v) = dictionary.variables().iter().find(|v| !known.contains(v.as_str())) {
        return Err(Error::UnknownVariable(v.clone()));
    }
    Ok(())
}

struct AdmissionExtraction {
    examples: Vec<Example>,
    audits: Vec<ExampleAudit>,
    n_points: usize,
    n_dropped: usize,
}

fn extract_admission(
    adm: &Admission,
    spec: &TaskSpec,
    dictionary: &FeatureDictionary,
    audit: bool,
) -> AdmissionExtraction {
    let times = raw_prediction_times(adm, spec);
    let series = SeriesIndex::new(adm, dictionary.variables());
    let outcome = OutcomeSeries::new(adm, spec);
    let open = spec.anchor == AnchorScheme::OnDemand;
    let mut out = AdmissionExtraction {
        examples: Vec::with_capacity(times.len()),
        audits: Vec::new(),
        n_points: times.len(),
        n_dropped: 0,
    };
    for t_p in times {
        let (label, source) = outcome.label(adm, t_p, spec);
        let LabelOutcome::Label(label) = label else {
            out.n_dropped += 1;
            continue;
        };
        let mut used = audit.then(Vec::new);
        let features = series.summarize(adm, dictionary, t_p, spec.lookback_hours, open, used.as_mut());
        if let Some(feature_input_times) = used {
            out.audits.push(ExampleAudit {
                admission_id: adm.id.clone(),
                t_p,
                feature_input_times,
                label_source: source,
            });
        }
        out.examples.push(Example {
            admission_id: adm.id.clone(),
            t_p,
            features,
            label,
        });
    }
    out
}

fn extract_all(
    cohort: &Cohort,
    spec: &TaskSpec,
    dictionary: &FeatureDictionary,
    audit: bool,
) -> Result<(Dataset, ExtractionStats, Vec<ExampleAudit>)> {
    spec.validate()?;
    check_dictionary(cohort, dictionary)?;
    let parts: Vec<AdmissionExtraction> = cohort
        .admissions
        .par_iter()
        .map(|adm| extract_admission(adm, spec, dictionary, audit))
        .collect();
    let mut stats = ExtractionStats {
        n_admissions: cohort.len(),
        ..Default::default()
    };
    let mut examples = Vec::new();
    let mut audits = Vec::new();
    for part in parts {
        stats.n_prediction_points += part.n_points;
        stats.n_dropped += part.n_dropped;
        if part.n_points == 0 {
            stats.n_admissions_without_predictions += 1;
        }
        examples.extend(part.examples);
        audits.extend(part.audits);
    }
    stats.n_examples = examples.len();
    stats.n_positive = examples.iter().filter(|e| e.label == 1).count();
    let dataset = Dataset {
        examples,
        feature_dictionary: dictionary.clone(),
        task: spec.clone(),
    };
    Ok((dataset, stats, audits))
}

/// Extracts one example per labeled prediction time of every admission.
pub fn extract_dataset(cohort: &Cohort, spec: &TaskSpec, dictionary: &FeatureDictionary) -> Result<Dataset> {
    extract_all(cohort, spec, dictionary, false).map(|(d, _, _)| d)
}

pub fn extract_dataset_with_stats(
    cohort: &Cohort,
    spec: &TaskSpec,
    dictionary: &FeatureDictionary,
) -> Result<(Dataset, ExtractionStats)> {
    extract_all(cohort, spec, dictionary, false).map(|(d, s, _)| (d, s))
}

/// Same extraction, additionally recording every input time used for the
/// features and the label of each example.
pub fn extract_dataset_audited(
    cohort: &Cohort,
    spec: &TaskSpec,
    dictionary: &FeatureDictionary,
) -> Result<(Dataset, Vec<ExampleAudit>)> {
    extract_all(cohort, spec, dictionary, true).map(|(d, _, a)| (d, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::ObservationEvent;

    fn adm(los: f64, died: bool, k: &[(f64, f64)]) -> Admission {
        Admission::new("A", los, died).with_events(
            k.iter()
                .map(|&(t, v)| ObservationEvent::new("potassium", t, v))
                .collect(),
        )
    }

    fn times(a: &Admission, spec: &TaskSpec) -> Vec<f64> {
        prediction_times(a, spec).into_iter().map(|p| p.t_p).collect()
    }

    fn hypo(anchor: AnchorScheme) -> TaskSpec {
        TaskSpec::below_threshold("potassium", 3.5, anchor, 12.0)
    }

    #[test]
    fn admission_anchored_times() {
        let rolling = TaskSpec::mortality(AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: Some(24.0),
        });
        assert_eq!(times(&adm(100.0, false, &[]), &rolling), vec![12.0, 36.0, 60.0, 84.0]);
        let single = TaskSpec::mortality(AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: None,
        });
        assert!(times(&adm(10.0, false, &[]), &single).is_empty());
        assert_eq!(times(&adm(12.0, false, &[]), &single), vec![12.0]);
    }

    #[test]
    fn event_anchored_terminal_times() {
        let single = TaskSpec::mortality(AnchorScheme::EventAnchored {
            lead_hours: 24.0,
            repeat_interval_hours: None,
        });
        assert_eq!(times(&adm(80.0, true, &[]), &single), vec![56.0]);
        assert!(times(&adm(20.0, true, &[]), &single).is_empty());
        let rolling = TaskSpec::mortality(AnchorScheme::EventAnchored {
            lead_hours: 24.0,
            repeat_interval_hours: Some(24.0),
        });
        assert_eq!(times(&adm(80.0, true, &[]), &rolling), vec![8.0, 32.0, 56.0]);
        // exactly zero is kept
        assert_eq!(times(&adm(48.0, true, &[]), &rolling), vec![0.0, 24.0]);
    }

    #[test]
    fn event_anchored_threshold_and_on_demand_times() {
        let a = adm(100.0, false, &[(5.0, 4.0), (30.0, 3.2), (30.0, 3.6), (50.0, 4.1)]);
        let evt = hypo(AnchorScheme::EventAnchored {
            lead_hours: 12.0,
            repeat_interval_hours: None,
        });
        assert_eq!(times(&a, &evt), vec![18.0, 38.0]);
        let od = hypo(AnchorScheme::OnDemand);
        assert_eq!(times(&a, &od), vec![5.0, 30.0, 50.0]);
    }

    #[test]
    fn threshold_labels() {
        let spec = hypo(AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: Some(12.0),
        });
        // measurement inside the horizon
        assert_eq!(label_at(&adm(100.0, false, &[(17.0, 3.0)]), 12.0, &spec), LabelOutcome::Label(1));
        // held value
        assert_eq!(label_at(&adm(100.0, false, &[(10.0, 4.1)]), 12.0, &spec), LabelOutcome::Label(0));
        assert_eq!(label_at(&adm(100.0, false, &[(10.0, 3.1)]), 12.0, &spec), LabelOutcome::Label(1));
        // nothing to impute
        assert_eq!(label_at(&adm(100.0, false, &[(40.0, 3.0)]), 12.0, &spec), LabelOutcome::Dropped);
        // any hypokalemic result in the window
        assert_eq!(
            label_at(&adm(100.0, false, &[(13.0, 4.0), (20.0, 3.4), (24.0, 4.4)]), 12.0, &spec),
            LabelOutcome::Label(1)
        );
        // horizon closed at t_p + h, open at t_p
        assert_eq!(label_at(&adm(100.0, false, &[(24.0, 3.0)]), 12.0, &spec), LabelOutcome::Label(1));
        assert_eq!(
            label_at(&adm(100.0, false, &[(12.0, 4.0), (24.1, 3.0)]), 12.0, &spec),
            LabelOutcome::Label(0)
        );
        let only = TaskSpec {
            label_policy: LabelPolicy::ObservedOnly,
            ..spec
        };
        assert_eq!(label_at(&adm(100.0, false, &[(10.0, 4.1)]), 12.0, &only), LabelOutcome::Dropped);
    }

    #[test]
    fn terminal_and_on_demand_labels() {
        let spec = TaskSpec::mortality(AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: Some(24.0),
        });
        for t in [12.0, 36.0] {
            assert_eq!(label_at(&adm(100.0, true, &[]), t, &spec), LabelOutcome::Label(1));
            assert_eq!(label_at(&adm(100.0, false, &[]), t, &spec), LabelOutcome::Label(0));
        }
        let od = hypo(AnchorScheme::OnDemand);
        let a = adm(100.0, false, &[(30.0, 3.6), (30.0, 3.2), (40.0, 3.7)]);
        assert_eq!(label_at(&a, 30.0, &od), LabelOutcome::Label(1));
        assert_eq!(label_at(&a, 40.0, &od), LabelOutcome::Label(0));
        assert_eq!(label_at(&a, 35.0, &od), LabelOutcome::Dropped);
    }

    #[test]
    fn spec_validation() {
        let ok = hypo(AnchorScheme::OnDemand);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.horizon = Horizon::Fixed { hours: 12.0 };
        assert!(bad.validate().is_err());
        let mut bad = TaskSpec::mortality(AnchorScheme::OnDemand);
        assert!(bad.validate().is_err());
        bad.anchor = AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: Some(0.0),
        };
        assert!(bad.validate().is_err());
        bad.anchor = AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: None,
        };
        assert!(bad.validate().is_ok());
        bad.horizon = Horizon::Fixed { hours: 24.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn extraction_counts() {
        let spec = hypo(AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: Some(12.0),
        });
        // points at 12, 24, 36, 48
        let a = adm(50.0, false, &[(20.0, 3.0), (30.0, 4.0)]);
        let cohort = Cohort::from_admissions(vec![a]);
        let dict = FeatureDictionary::new(vec!["potassium".into()], vec![]);
        let (ds, stats) = extract_dataset_with_stats(&cohort, &spec, &dict).unwrap();
        assert_eq!(stats.n_prediction_points, 4);
        assert_eq!(stats.n_dropped, 0);
        assert_eq!(ds.len(), 4);
        let a = adm(50.0, false, &[(30.0, 4.0)]);
        let cohort = Cohort::from_admissions(vec![a]);
        let (ds, stats) = extract_dataset_with_stats(&cohort, &spec, &dict).unwrap();
        assert_eq!((ds.len(), stats.n_dropped), (3, 1));
        assert_eq!(ds.labels(), vec![0, 0, 0]);

        let empty = Cohort {
            variable_dictionary: vec!["potassium".into()],
            ..Default::default()
        };
        assert!(extract_dataset(&empty, &spec, &dict).unwrap().is_empty());

        let unknown = FeatureDictionary::new(vec!["sodium".into()], vec![]);
        assert!(matches!(
            extract_dataset(&cohort, &spec, &unknown),
            Err(Error::UnknownVariable(_))
        ));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let spec = hypo(AnchorScheme::OnDemand);
        let a = adm(50.0, false, &[(20.0, 3.0), (30.0, 4.0)]);
        let cohort = Cohort::from_admissions(vec![a]);
        let dict = FeatureDictionary::new(vec!["potassium".into()], vec![]);
        let ds = extract_dataset(&cohort, &spec, &dict).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("admission_id,t_p,label,f_0,f_1,f_2,f_3\n"));
        let back = Dataset::read_csv(buf.as_slice(), dict, spec).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back.examples[0].features[0].is_nan());
        assert_eq!(back.examples[1].features, vec![3.0, 3.0, 3.0, 1.0]);
    }
}
