//! AUROC (Mann-Whitney, half credit for ties), patient-level AUROC over
//! prediction series, and aggregation across repeated splits.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Every prediction is scored on its own.
    Pointwise,
    /// Each admission counts once; it is positive at a threshold as soon as
    /// any of its predictions exceeds it.
    PatientLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub admission_id: String,
    pub t_p: f64,
    pub score: f64,
    pub label: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub records: Vec<PredictionRecord>,
}

impl PredictionSet {
    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn evaluate(&self, mode: EvalMode) -> Result<f64> {
        match mode {
            EvalMode::Pointwise => auroc(&self.scores(), &self.labels()),
            EvalMode::PatientLevel => patient_level_auroc(self),
        }
    }
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks, so the numerator is exact.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (positives, negatives) = class_counts(labels);
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuroc {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the positive rank sum, so mid-ranks stay integral
    let mut rank_sum2 = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        // ranks start+1 ..= end, twice their mean is start + end + 1
        rank_sum2 += (pos_in_group * (start + end + 1)) as f64;
        start = end;
    }
    let p = positives as f64;
    let numerator2 = rank_sum2 - p * (p + 1.0);
    Ok(numerator2 / (2.0 * p * negatives as f64))
}

/// Threshold sweep over all predictions in descending score order. An
/// admission turns positive the first time one of its predictions clears
/// the threshold, so each admission enters the curve exactly once.
pub fn patient_level_auroc(predictions: &PredictionSet) -> Result<f64> {
    let mut patient: HashMap<&str, usize> = HashMap::new();
    let mut patient_label: Vec<u8> = Vec::new();
    let mut by_record = Vec::with_capacity(predictions.records.len());
    for r in &predictions.records {
        let next = patient_label.len();
        let idx = *patient.entry(r.admission_id.as_str()).or_insert(next);
        if idx == next {
            patient_label.push(r.label);
        } else if patient_label[idx] != r.label {
            return Err(Error::InconsistentLabels(r.admission_id.clone()));
        }
        by_record.push(idx);
    }
    let (positives, negatives) = class_counts(&patient_label);
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuroc {
            positives,
            negatives,
        });
    }

    let mut order: Vec<usize> = (0..predictions.records.len()).collect();
    let score = |i: usize| predictions.records[i].score;
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)));

    let mut flagged = vec![false; patient_label.len()];
    let (mut tp, mut area2) = (0usize, 0.0f64);
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && score(order[end]) == score(order[start]) {
            end += 1;
        }
        let (mut d_tp, mut d_fp) = (0usize, 0usize);
        for &i in &order[start..end] {
            let p = by_record[i];
            if !flagged[p] {
                flagged[p] = true;
                if patient_label[p] == 1 {
                    d_tp += 1;
                } else {
                    d_fp += 1;
                }
            }
        }
        // trapezoid, doubled: d_fp * (tp + (tp + d_tp))
        area2 += (d_fp * (2 * tp + d_tp)) as f64;
        tp += d_tp;
        start = end;
    }
    Ok(area2 / (2.0 * positives as f64 * negatives as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_repeat_auroc: Vec<f64>,
    pub mean: f64,
    /// Population (divide-by-n) standard deviation.
    pub std: f64,
    pub n_repeats: usize,
    pub metadata: BTreeMap<String, String>,
}

pub fn aggregate_repeats(aurocs: &[f64]) -> Result<EvalReport> {
    if aurocs.is_empty() {
        return Err(Error::EmptyInput("no repeats to aggregate"));
    }
    let n = aurocs.len() as f64;
    let mean = aurocs.iter().sum::<f64>() / n;
    let var = aurocs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalReport {
        per_repeat_auroc: aurocs.to_vec(),
        mean,
        std: var.sqrt(),
        n_repeats: aurocs.len(),
        metadata: BTreeMap::new(),
    })
}
