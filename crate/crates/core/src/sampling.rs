//! Admission-level splitting, cross-validation folds and per-admission
//! resampling.
//!
//! All randomness comes from [`rand_chacha::ChaCha8Rng`] streams keyed by
//! [`derive_seed`], so each consumer (split repeat, fold plan, resample)
//! draws from its own stream and adding a consumer never shifts another.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::indexing::Dataset;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Child seed for stream `(tag, index)` under `master`:
/// `mix64(mix64(master ^ fnv1a(tag)) ^ index)`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    mix64(mix64(master ^ fnv1a(tag)) ^ index)
}

pub fn rng_for(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPlan {
    pub seed: u64,
    pub n_repeats: usize,
    pub test_fraction: f64,
    pub n_cv_folds: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            n_repeats: 100,
            test_fraction: 0.25,
            n_cv_folds: 5,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.n_repeats == 0 {
            return Err(Error::Config("n_repeats must be at least 1".into()));
        }
        if self.n_cv_folds < 2 {
            return Err(Error::Config("n_cv_folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn n_test(&self, n: usize) -> usize {
        (self.test_fraction * n as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub repeat_index: usize,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

fn sorted_unique<S: AsRef<str>>(ids: &[S]) -> Vec<String> {
    let set: BTreeSet<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    set.into_iter().collect()
}

/// `plan.n_repeats` random train/test partitions of the admissions. The
/// input order of `ids` does not matter.
pub fn make_splits<S: AsRef<str>>(ids: &[S], plan: &SplitPlan) -> Result<Vec<SplitAssignment>> {
    plan.validate()?;
    let ids = sorted_unique(ids);
    let n = ids.len();
    let n_test = plan.n_test(n);
    if n < 4 || n_test == 0 || n_test >= n {
        return Err(Error::TooFewAdmissions(format!(
            "{n} admissions cannot be split with test fraction {}",
            plan.test_fraction
        )));
    }
    Ok((0..plan.n_repeats)
        .map(|r| {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng_for(plan.seed, "split", r as u64));
            let test_ids = shuffled.split_off(n - n_test).into_iter().collect();
            SplitAssignment {
                repeat_index: r,
                train_ids: shuffled.into_iter().collect(),
                test_ids,
            }
        })
        .collect())
}

/// Audit CSV `repeat_index,admission_id,role`.
pub fn write_splits_csv<W: Write>(splits: &[SplitAssignment], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["repeat_index", "admission_id", "role"])?;
    for s in splits {
        for (ids, role) in [(&s.train_ids, "train"), (&s.test_ids, "test")] {
            for id in ids {
                w.write_record([s.repeat_index.to_string().as_str(), id, role])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fit_ids: BTreeSet<String>,
    pub val_ids: BTreeSet<String>,
}

/// Admission-level folds: validation sets partition `train_ids` and differ
/// in size by at most one.
pub fn make_cv_folds<S: AsRef<str>>(train_ids: &[S], n_folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if n_folds < 2 {
        return Err(Error::Config("n_folds must be at least 2".into()));
    }
    let mut ids = sorted_unique(train_ids);
    if ids.len() < n_folds {
        return Err(Error::TooFewAdmissions(format!(
            "{} admissions for {n_folds} folds",
            ids.len()
        )));
    }
    ids.shuffle(&mut rng_for(seed, "cv-folds", 0));
    Ok((0..n_folds)
        .map(|f| {
            let mut fold = Fold {
                fit_ids: BTreeSet::new(),
                val_ids: BTreeSet::new(),
            };
            for (i, id) in ids.iter().enumerate() {
                if i % n_folds == f {
                    fold.val_ids.insert(id.clone());
                } else {
                    fold.fit_ids.insert(id.clone());
                }
            }
            fold
        })
        .collect())
}

/// Draws exactly `k` examples per admission, uniformly with replacement from
/// that admission's examples. Drawn examples keep their time order.
pub fn subsample_per_admission(dataset: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidSampling("k must be at least 1".into()));
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        let g = *slot.entry(ex.admission_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let mut rng = rng_for(seed, "subsample", 0);
    let mut examples = Vec::with_capacity(groups.len() * k);
    for members in &groups {
        let mut picks: Vec<usize> = (0..k).map(|_| members[rng.random_range(0..members.len())]).collect();
        picks.sort_unstable();
        examples.extend(picks.into_iter().map(|i| dataset.examples[i].clone()));
    }
    Ok(Dataset {
        examples,
        feature_dictionary: dataset.feature_dictionary.clone(),
        task: dataset.task.clone(),
    })
}

/// Resample size from the cohort's median stay: `floor(median_los / interval)`,
/// at least 1. `first_offset_hours` only has to be valid.
pub fn median_resample_k(cohort: &Cohort, first_offset_hours: f64, interval_hours: f64) -> Result<usize> {
    if !(first_offset_hours.is_finite() && first_offset_hours >= 0.0) {
        return Err(Error::InvalidSampling("first offset must be non-negative".into()));
    }
    if !(interval_hours.is_finite() && interval_hours > 0.0) {
        return Err(Error::InvalidSampling("interval must be positive".into()));
    }
    let median = cohort
        .median_los_hours()
        .ok_or(Error::EmptyInput("cohort has no admissions"))?;
    Ok(((median / interval_hours).floor() as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Admission;
    use crate::features::FeatureDictionary;
    use crate::indexing::{AnchorScheme, Example, TaskSpec};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("A{i:03}")).collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let plan = SplitPlan {
            seed: 7,
            ..Default::default()
        };
        let splits = make_splits(&ids(100), &plan).unwrap();
        assert_eq!(splits.len(), 100);
        for s in &splits {
            assert_eq!(s.test_ids.len(), 25);
            assert_eq!(s.train_ids.len(), 75);
            assert!(s.train_ids.is_disjoint(&s.test_ids));
        }
        assert_eq!(splits, make_splits(&ids(100), &plan).unwrap());
        let mut reversed = ids(100);
        reversed.reverse();
        assert_eq!(splits, make_splits(&reversed, &plan).unwrap());
        assert_ne!(splits[0], splits[1]);
    }

    #[test]
    fn split_rejects_tiny_cohorts() {
        assert!(make_splits(&ids(3), &SplitPlan::default()).is_err());
        let plan = SplitPlan {
            test_fraction: 0.01,
            ..Default::default()
        };
        assert!(make_splits(&ids(10), &plan).is_err());
        let plan = SplitPlan {
            test_fraction: 1.0,
            ..Default::default()
        };
        assert!(make_splits(&ids(10), &plan).is_err());
    }

    #[test]
    fn folds_partition() {
        let folds = make_cv_folds(&ids(10), 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut union = BTreeSet::new();
        for f in &folds {
            assert_eq!(f.val_ids.len(), 2);
            assert_eq!(f.fit_ids.len(), 8);
            assert!(f.fit_ids.is_disjoint(&f.val_ids));
            assert!(union.is_disjoint(&f.val_ids));
            union.extend(f.val_ids.iter().cloned());
        }
        assert_eq!(union, ids(10).into_iter().collect());
        let sizes: Vec<usize> = make_cv_folds(&ids(13), 5, 3)
            .unwrap()
            .iter()
            .map(|f| f.val_ids.len())
            .collect();
        assert_eq!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap(), 1);
        assert!(make_cv_folds(&ids(4), 5, 3).is_err());
    }

    fn dataset(counts: &[usize]) -> Dataset {
        let mut examples = Vec::new();
        for (a, &m) in counts.iter().enumerate() {
            for j in 0..m {
                examples.push(Example {
                    admission_id: format!("A{a}"),
                    t_p: j as f64,
                    features: vec![j as f64],
                    label: 0,
                });
            }
        }
        Dataset {
            examples,
            feature_dictionary: FeatureDictionary::new(vec![], vec!["x".into()]),
            task: TaskSpec::mortality(AnchorScheme::OnDemand),
        }
    }

    #[test]
    fn subsample_exact_k() {
        let ds = dataset(&[3, 1]);
        let sub = subsample_per_admission(&ds, 6, 11).unwrap();
        assert_eq!(sub.len(), 12);
        let a0: Vec<&Example> = sub.examples.iter().filter(|e| e.admission_id == "A0").collect();
        assert_eq!(a0.len(), 6);
        assert!(a0.iter().all(|e| e.t_p < 3.0));
        assert!(a0.windows(2).all(|w| w[0].t_p <= w[1].t_p));
        assert_eq!(sub, subsample_per_admission(&ds, 6, 11).unwrap());
        assert!(subsample_per_admission(&ds, 0, 11).is_err());
    }

    fn cohort_with_los(los: &[f64]) -> Cohort {
        Cohort::from_admissions(
            los.iter()
                .enumerate()
                .map(|(i, &l)| Admission::new(format!("A{i}"), l, false))
                .collect(),
        )
    }

    #[test]
    fn median_k() {
        assert_eq!(median_resample_k(&cohort_with_los(&[100.0, 165.6, 300.0]), 12.0, 24.0).unwrap(), 6);
        assert_eq!(median_resample_k(&cohort_with_los(&[20.0]), 12.0, 24.0).unwrap(), 1);
        assert_eq!(median_resample_k(&cohort_with_los(&[72.0]), 12.0, 24.0).unwrap(), 3);
        // lower median of an even count
        assert_eq!(median_resample_k(&cohort_with_los(&[48.0, 100.0]), 12.0, 24.0).unwrap(), 2);
        assert!(median_resample_k(&cohort_with_los(&[]), 12.0, 24.0).is_err());
    }

    #[test]
    fn seed_streams_differ() {
        assert_ne!(derive_seed(1, "split", 0), derive_seed(1, "split", 1));
        assert_ne!(derive_seed(1, "split", 0), derive_seed(1, "cv-folds", 0));
        assert_ne!(derive_seed(1, "split", 0), derive_seed(2, "split", 0));
    }
}
