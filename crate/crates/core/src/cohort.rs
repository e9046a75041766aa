//! Admission-level data model.
//!
//! Times are hours relative to the start of the admission. An [`Admission`]
//! owns its observation stream; a [`Cohort`] groups admissions together with
//! the dictionaries of variable and demographic-flag names they use.

mod io;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

pub use io::{
    ingest_cohort, load_cohort, read_cohort_jsonl, write_cohort_csv, write_cohort_dir,
    write_cohort_jsonl, ADMISSION_FILE, ADMISSION_HEADER, EVENT_FILE, EVENT_HEADER, JSONL_FILE,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationEvent {
    pub variable: String,
    pub time: f64,
    pub value: f64,
}

impl ObservationEvent {
    pub fn new(variable: impl Into<String>, time: f64, value: f64) -> Self {
        Self {
            variable: variable.into(),
            time,
            value,
        }
    }
}

/// One hospital stay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub id: String,
    pub los_hours: f64,
    #[serde(default)]
    pub demographics: BTreeSet<String>,
    #[serde(default)]
    pub events: Vec<ObservationEvent>,
    pub died_in_hospital: bool,
}

impl Admission {
    pub fn new(id: impl Into<String>, los_hours: f64, died_in_hospital: bool) -> Self {
        Self {
            id: id.into(),
            los_hours,
            demographics: BTreeSet::new(),
            events: Vec::new(),
            died_in_hospital,
        }
    }

    pub fn with_flags<I, S>(mut self, flags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.demographics.extend(flags.into_iter().map(Into::into));
        self
    }

    pub fn with_events(mut self, events: Vec<ObservationEvent>) -> Self {
        self.events = events;
        self.sort_events();
        self
    }

    /// Stable sort by time; simultaneous events keep their input order.
    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| a.time.total_cmp(&b.time));
    }

    pub fn events_of<'a>(&'a self, variable: &'a str) -> impl Iterator<Item = &'a ObservationEvent> {
        self.events.iter().filter(move |e| e.variable == variable)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub admissions: Vec<Admission>,
    pub variable_dictionary: Vec<String>,
    pub demographic_dictionary: Vec<String>,
}

impl Cohort {
    /// Builds a cohort whose dictionaries are the sorted sets of names the
    /// admissions actually use. Events are sorted per admission.
    pub fn from_admissions(mut admissions: Vec<Admission>) -> Self {
        let mut variables = BTreeSet::new();
        let mut flags = BTreeSet::new();
        for adm in &mut admissions {
            adm.sort_events();
            variables.extend(adm.events.iter().map(|e| e.variable.clone()));
            flags.extend(adm.demographics.iter().cloned());
        }
        Self {
            admissions,
            variable_dictionary: variables.into_iter().collect(),
            demographic_dictionary: flags.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.admissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.admissions.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.admissions.iter().map(|a| a.events.len()).sum()
    }

    pub fn get(&self, id: &str) -> Option<&Admission> {
        self.admissions.iter().find(|a| a.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.admissions.iter().map(|a| a.id.clone()).collect()
    }

    /// Sub-cohort restricted to `ids`, keeping this cohort's admission order
    /// and dictionaries.
    pub fn subset(&self, ids: &HashSet<&str>) -> Cohort {
        Cohort {
            admissions: self
                .admissions
                .iter()
                .filter(|a| ids.contains(a.id.as_str()))
                .cloned()
                .collect(),
            variable_dictionary: self.variable_dictionary.clone(),
            demographic_dictionary: self.demographic_dictionary.clone(),
        }
    }

    /// Median length of stay in hours, lower median for even counts.
    pub fn median_los_hours(&self) -> Option<f64> {
        if self.admissions.is_empty() {
            return None;
        }
        let mut los: Vec<f64> = self.admissions.iter().map(|a| a.los_hours).collect();
        los.sort_by(f64::total_cmp);
        Some(los[(los.len() - 1) / 2])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_admissions: usize,
    pub n_events: usize,
    pub errors: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Checks every admission and cohort invariant and reports all violations.
pub fn validate(cohort: &Cohort) -> ValidationReport {
    let variables: HashSet<&str> = cohort.variable_dictionary.iter().map(String::as_str).collect();
    let flags: HashSet<&str> = cohort
        .demographic_dictionary
        .iter()
        .map(String::as_str)
        .collect();
    let mut report = ValidationReport {
        n_admissions: cohort.len(),
        n_events: cohort.n_events(),
        ..Default::default()
    };

    if variables.len() != cohort.variable_dictionary.len() {
        report
            .errors
            .push((String::new(), "variable dictionary has duplicate entries".into()));
    }
    if flags.len() != cohort.demographic_dictionary.len() {
        report
            .errors
            .push((String::new(), "demographic dictionary has duplicate entries".into()));
    }

    let mut seen = HashSet::new();
    for adm in &cohort.admissions {
        let mut err = |msg: String| report.errors.push((adm.id.clone(), msg));
        if !seen.insert(adm.id.as_str()) {
            err("duplicate admission id".into());
        }
        if !(adm.los_hours.is_finite() && adm.los_hours > 0.0) {
            err(format!("los_hours must be positive, got {}", adm.los_hours));
        }
        for flag in &adm.demographics {
            if !flags.contains(flag.as_str()) {
                err(format!("demographic flag `{flag}` not in dictionary"));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        let mut unsorted = false;
        for (i, ev) in adm.events.iter().enumerate() {
            if !(ev.time.is_finite() && ev.time >= 0.0) {
                err(format!("event {i} has invalid time {}", ev.time));
            } else if ev.time > adm.los_hours {
                err(format!(
                    "event {i} at {} h is after discharge at {} h",
                    ev.time, adm.los_hours
                ));
            }
            if !ev.value.is_finite() {
                err(format!("event {i} has non-finite value"));
            }
            if !variables.contains(ev.variable.as_str()) {
                err(format!("event {i} variable `{}` not in dictionary", ev.variable));
            }
            if ev.time < prev {
                unsorted = true;
            }
            prev = ev.time;
        }
        if unsorted {
            err("events are not sorted by time".into());
        }
        if adm.events.is_empty() {
            report
                .warnings
                .push(format!("admission {} has no events", adm.id));
        }
    }
    report
}

/// Variables measured at least once in at least `ceil(min_fraction * n)`
/// admissions, in dictionary order.
pub fn filter_variables_by_prevalence(cohort: &Cohort, min_fraction: f64) -> Vec<String> {
    let min_fraction = min_fraction.clamp(0.0, 1.0);
    // small slack so that e.g. 0.07 * 100 counts as 7
    let needed = (min_fraction * cohort.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    if needed == 0 {
        return cohort.variable_dictionary.clone();
    }
    let mut counts = std::collections::HashMap::<&str, usize>::new();
    for adm in &cohort.admissions {
        let present: HashSet<&str> = adm.events.iter().map(|e| e.variable.as_str()).collect();
        for v in present {
            *counts.entry(v).or_default() += 1;
        }
    }
    cohort
        .variable_dictionary
        .iter()
        .filter(|v| counts.get(v.as_str()).copied().unwrap_or(0) >= needed)
        .cloned()
        .collect()
}
