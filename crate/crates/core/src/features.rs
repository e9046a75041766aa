//! Lookback-window summary features and train-only standardization.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cohort::{filter_variables_by_prevalence, Admission, Cohort};
use crate::error::{Error, Result};

/// Summary statistics emitted per retained variable, in column order.
pub const SUMMARIES: [&str; 4] = ["min", "mean", "max", "count"];

/// Missing summaries are carried as NaN until standardization.
pub const MISSING: f64 = f64::NAN;

pub const STD_FLOOR: f64 = 1e-8;

/// Ordered feature layout: four summaries per variable, then one column per
/// demographic flag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    variables: Vec<String>,
    flags: Vec<String>,
    entries: Vec<String>,
}

impl FeatureDictionary {
    pub fn new(variables: Vec<String>, flags: Vec<String>) -> Self {
        let mut entries = Vec::with_capacity(SUMMARIES.len() * variables.len() + flags.len());
        for v in &variables {
            entries.extend(SUMMARIES.iter().map(|s| format!("{v}.{s}")));
        }
        entries.extend(flags.iter().map(|f| format!("demo.{f}")));
        Self {
            variables,
            flags,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    /// Sidecar format: one feature name per line.
    pub fn write_sidecar<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            writeln!(out, "{e}")?;
        }
        Ok(())
    }

    pub fn read_sidecar<R: BufRead>(input: R) -> Result<Self> {
        let mut variables: Vec<String> = Vec::new();
        let mut flags = Vec::new();
        let lines: Vec<String> = input
            .lines()
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect();
        let bad = |i: usize, msg: &str| Error::Parse {
            file: "dictionary sidecar",
            line: i as u64 + 1,
            message: msg.to_string(),
        };
        let mut i = 0;
        while i < lines.len() {
            if let Some(flag) = lines[i].strip_prefix("demo.") {
                flags.push(flag.to_string());
                i += 1;
                continue;
            }
            if !flags.is_empty() {
                return Err(bad(i, "variable summaries must precede demographic flags"));
            }
            let var = lines[i]
                .strip_suffix(".min")
                .ok_or_else(|| bad(i, "expected `<var>.min`"))?;
            for (j, s) in SUMMARIES.iter().enumerate() {
                if lines.get(i + j).map(String::as_str) != Some(format!("{var}.{s}").as_str()) {
                    return Err(bad(i + j, &format!("expected `{var}.{s}`")));
                }
            }
            variables.push(var.to_string());
            i += SUMMARIES.len();
        }
        Ok(Self::new(variables, flags))
    }
}

/// Retained variables (by admission prevalence) followed by every
/// demographic flag in the cohort dictionary.
pub fn build_dictionary(cohort: &Cohort, min_prevalence: f64) -> FeatureDictionary {
    FeatureDictionary::new(
        filter_variables_by_prevalence(cohort, min_prevalence),
        cohort.demographic_dictionary.clone(),
    )
}

/// Per-variable time/value columns of one admission, restricted to the
/// variables of a dictionary.
pub(crate) struct SeriesIndex {
    times: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl SeriesIndex {
    pub(crate) fn new(admission: &Admission, variables: &[String]) -> Self {
        let slot: HashMap<&str, usize> = variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        let mut times = vec![Vec::new(); variables.len()];
        let mut values = vec![Vec::new(); variables.len()];
        for ev in &admission.events {
            if let Some(&i) = slot.get(ev.variable.as_str()) {
                times[i].push(ev.time);
                values[i].push(ev.value);
            }
        }
        Self { times, values }
    }

    /// Index range of events in `(start, end]`, or `(start, end)` when `open_end`.
    fn window(&self, var: usize, start: f64, end: f64, open_end: bool) -> std::ops::Range<usize> {
        let t = &self.times[var];
        let lo = t.partition_point(|&x| x <= start);
        let hi = if open_end {
            t.partition_point(|&x| x < end)
        } else {
            t.partition_point(|&x| x <= end)
        };
        lo..hi.max(lo)
    }

    pub(crate) fn summarize(
        &self,
        admission: &Admission,
        dictionary: &FeatureDictionary,
        t_p: f64,
        lookback: f64,
        open_at_tp: bool,
        mut used_times: Option<&mut Vec<f64>>,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(dictionary.len());
        for var in 0..dictionary.variables.len() {
            let range = self.window(var, t_p - lookback, t_p, open_at_tp);
            if let Some(used) = used_times.as_deref_mut() {
                used.extend_from_slice(&self.times[var][range.clone()]);
            }
            let vals = &self.values[var][range];
            if vals.is_empty() {
                out.extend_from_slice(&[MISSING, MISSING, MISSING, 0.0]);
                continue;
            }
            let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for &v in vals {
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
            }
            let n = vals.len() as f64;
            // clamp guards min <= mean <= max against summation rounding
            let mean = (sum / n).clamp(lo, hi);
            out.extend_from_slice(&[lo, mean, hi, n]);
        }
        out.extend(
            dictionary
                .flags
                .iter()
                .map(|f| if admission.demographics.contains(f) { 1.0 } else { 0.0 }),
        );
        out
    }
}

/// Raw (unstandardized) feature vector over the lookback window ending at
/// `t_p`. The window is `(t_p - lookback, t_p]`, or `(t_p - lookback, t_p)`
/// when `open_at_tp` is set.
pub fn summarize_window(
    admission: &Admission,
    t_p: f64,
    lookback: f64,
    dictionary: &FeatureDictionary,
    open_at_tp: bool,
) -> Result<Vec<f64>> {
    if dictionary.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let index = SeriesIndex::new(admission, &dictionary.variables);
    Ok(index.summarize(admission, dictionary, t_p, lookback, open_at_tp, None))
}

/// Per-feature centering and scaling fitted on training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Mean over observed values; population std of the mean-imputed column,
    /// so the standardized training matrix has exact zero mean and unit std.
    /// A column with no observed value gets mean 0.
    pub fn fit<'a, I>(rows: I, d: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
        I::IntoIter: Clone,
    {
        let rows = rows.into_iter();
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let mut observed = vec![0usize; d];
        for row in rows.clone() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            n += 1;
            for (j, &x) in row.iter().enumerate() {
                if !x.is_nan() {
                    sum[j] += x;
                    observed[j] += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&observed)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let mut ss = vec![0.0; d];
        for row in rows {
            for (j, &x) in row.iter().enumerate() {
                if !x.is_nan() {
                    let dx = x - mean[j];
                    ss[j] += dx * dx;
                }
            }
        }
        let std = ss
            .iter()
            .map(|&s| (s / n as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(raw, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, raw: &[f64], out: &mut [f64]) -> Result<()> {
        if raw.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: raw.len(),
            });
        }
        for (j, (&x, o)) in raw.iter().zip(out.iter_mut()).enumerate() {
            *o = if x.is_nan() {
                0.0
            } else {
                (x - self.mean[j]) / self.std[j]
            };
        }
        Ok(())
    }
}
