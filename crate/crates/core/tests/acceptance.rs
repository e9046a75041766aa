//! Acceptance checks. Each test writes one `criterion N: PASS|FAIL` line to
//! stdout, bypassing the harness capture, then asserts.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ehrindex::features::build_dictionary;
use ehrindex::indexing::{extract_dataset, extract_dataset_audited, label_at, prediction_times};
use ehrindex::learner::{train, Objective, TrainConfig};
use ehrindex::metrics::{auroc, patient_level_auroc, PredictionRecord};
use ehrindex::runner::{report, run_experiment, shipped_config, RunOptions, RunSummary, NOT_COMPARABLE_NOTE};
use ehrindex::sampling::{make_cv_folds, make_splits};
use ehrindex::{
    generate_cohort, Admission, AnchorScheme, Horizon, LabelPolicy, PredictionSet, SplitPlan, Standardizer, SynthConfig,
    TaskSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REPEATS: usize = 20;

fn verdict(n: u32, ok: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {n} failed: {detail}");
}

fn run_shipped(name: &str, out: Option<&Path>) -> RunSummary {
    let config = shipped_config(name).unwrap();
    run_experiment(
        &config,
        &RunOptions {
            repeats: Some(REPEATS),
            out_dir: out.map(Path::to_path_buf),
            ..Default::default()
        },
    )
    .unwrap()
}

fn mean(s: &RunSummary, arm: &str) -> f64 {
    s.mean_auroc(arm).unwrap_or_else(|| panic!("no arm {arm}"))
}

#[test]
fn criterion_1_indexing_bias() {
    let mut ok = true;
    let mut detail = String::new();
    for name in ["fig2-mortality", "fig2-hypokalemia"] {
        let s = run_shipped(name, None);
        let adm = mean(&s, "adm-train/adm-test");
        let evt = mean(&s, "evt-train/evt-test");
        let cross = mean(&s, "evt-train/adm-test");
        ok &= evt - adm >= 0.05 && cross <= adm - 0.02;
        write!(detail, "[{name}: adm/adm {adm:.3}, evt/evt {evt:.3}, evt/adm {cross:.3}] ").unwrap();
    }
    verdict(1, ok, detail.trim_end());
}

#[test]
fn criterion_2_subsampling() {
    let s = run_shipped("table3-subsample", None);
    let all = mean(&s, "all-samples");
    let median = mean(&s, "median-sample");
    verdict(2, median >= all, &format!("median-k {median:.4} vs all {all:.4}"));
}

#[test]
fn criterion_3_single_vs_rolling() {
    let s = run_shipped("table4-single-vs-rolling", None);
    let single = mean(&s, "single-train");
    let rolling = mean(&s, "rolling-train");
    verdict(
        3,
        rolling - single >= 0.02,
        &format!("rolling {rolling:.4} vs single {single:.4} (gap {:.4})", rolling - single),
    );
}

#[test]
fn criterion_4_on_demand() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_shipped("table5-on-demand", Some(dir.path()));
    let od = mean(&s, "on-demand");
    let adm = mean(&s, "adm-12h");
    let r = report(dir.path()).unwrap();
    let noted = r.notes.iter().any(|n| n == NOT_COMPARABLE_NOTE) && r.table.contains(NOT_COMPARABLE_NOTE);
    verdict(4, od < adm && noted, &format!("on-demand {od:.4} vs adm-12h {adm:.4}, note present: {noted}"));
}

fn random_prediction_set(rng: &mut ChaCha8Rng) -> PredictionSet {
    let n_adm = rng.random_range(2..30);
    let mut positive: Vec<bool> = (0..n_adm).map(|_| rng.random_bool(0.4)).collect();
    positive[0] = false;
    positive[1] = true;
    let n = rng.random_range(2..200);
    PredictionSet {
        records: (0..n)
            .map(|i| {
                // the first two records guarantee both classes
                let a = if i < 2 { i } else { rng.random_range(0..n_adm) };
                PredictionRecord {
                    admission_id: format!("A{a}"),
                    t_p: i as f64,
                    score: f64::from(rng.random_range(-12i32..12)) / 3.0,
                    label: u8::from(positive[a]),
                }
            })
            .collect(),
    }
}

#[test]
fn criterion_5_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0005);
    let mut failures = Vec::new();

    let mut sweep_checked = 0;
    for _ in 0..1000 {
        let set = random_prediction_set(&mut rng);
        let mut best: BTreeMap<&str, (f64, u8)> = BTreeMap::new();
        for r in &set.records {
            let e = best.entry(r.admission_id.as_str()).or_insert((f64::NEG_INFINITY, r.label));
            e.0 = e.0.max(r.score);
        }
        let (scores, labels): (Vec<f64>, Vec<u8>) = best.values().copied().unzip();
        match (auroc(&scores, &labels), patient_level_auroc(&set)) {
            (Ok(a), Ok(b)) if (a - b).abs() <= 1e-12 => sweep_checked += 1,
            other => failures.push(format!("patient sweep {other:?}")),
        }
    }

    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-15i32..15)) / 5.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        labels[0] = 0;
        labels[1] = 1;
        if auroc(&scores, &labels).unwrap() != common::pair_count(&scores, &labels) {
            failures.push(format!("pair counting n={n}"));
        }
    }

    let spec = {
        let mut t = TaskSpec::below_threshold(
            "potassium",
            3.5,
            AnchorScheme::AdmissionAnchored {
                first_offset_hours: 12.0,
                repeat_interval_hours: Some(6.0),
            },
            12.0,
        );
        t.label_policy = LabelPolicy::ObservedOrHold;
        t.horizon = Horizon::Fixed { hours: 12.0 };
        t
    };
    let mut labels_checked = 0;
    for i in 0..1000 {
        let a = common::random_stream(&mut rng, &format!("S{i}"));
        for p in prediction_times(&a, &spec) {
            labels_checked += 1;
            if label_at(&a, p.t_p, &spec) != common::oracle_label(&a, p.t_p, &spec) {
                failures.push(format!("copy-and-hold {} at {}", a.id, p.t_p));
            }
        }
    }

    for _ in 0..1000 {
        let los = f64::from(rng.random_range(1u32..4000)) / 8.0;
        let first = f64::from(rng.random_range(0u32..400)) / 8.0;
        let step = f64::from(rng.random_range(1u32..200)) / 8.0;
        let spec = TaskSpec::mortality(AnchorScheme::AdmissionAnchored {
            first_offset_hours: first,
            repeat_interval_hours: Some(step),
        });
        let n = prediction_times(&Admission::new("A", los, false), &spec).len();
        let expected = if los >= first { ((los - first) / step).floor() as usize + 1 } else { 0 };
        if n != expected {
            failures.push(format!("rolling count los={los} first={first} step={step}: {n} vs {expected}"));
        }
    }

    verdict(
        5,
        failures.is_empty(),
        &format!(
            "{} mismatches; {sweep_checked} sweep instances, 1000 pair-count instances, {labels_checked} held labels over 1000 streams, 1000 count triples {:?}",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_6_leakage() {
    let mut failures = Vec::new();

    let ids: Vec<String> = (0..1000).map(|i| format!("A{i:04}")).collect();
    let plan = SplitPlan {
        seed: 6,
        n_repeats: 100,
        test_fraction: 0.2,
        n_cv_folds: 5,
    };
    let splits = make_splits(&ids, &plan).unwrap();
    for s in &splits {
        if !s.train_ids.is_disjoint(&s.test_ids) {
            failures.push(format!("train/test overlap in repeat {}", s.repeat_index));
        }
        let train: Vec<&String> = s.train_ids.iter().collect();
        let folds = make_cv_folds(&train, 5, s.repeat_index as u64).unwrap();
        let mut seen = BTreeSet::new();
        for f in &folds {
            let clean = f.fit_ids.is_disjoint(&f.val_ids)
                && f.fit_ids.is_disjoint(&s.test_ids)
                && f.val_ids.is_disjoint(&s.test_ids)
                && seen.is_disjoint(&f.val_ids);
            if !clean {
                failures.push(format!("fold overlap in repeat {}", s.repeat_index));
            }
            seen.extend(f.val_ids.iter().cloned());
        }
    }

    let cohort = generate_cohort(&SynthConfig {
        n_admissions: 300,
        seed: 66,
        ..SynthConfig::reference()
    })
    .unwrap();
    let dict = build_dictionary(&cohort, 0.05);
    let specs = [
        TaskSpec::mortality(AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: Some(12.0),
        }),
        TaskSpec::mortality(AnchorScheme::EventAnchored {
            lead_hours: 12.0,
            repeat_interval_hours: None,
        }),
        TaskSpec::below_threshold(
            "potassium",
            3.5,
            AnchorScheme::AdmissionAnchored {
                first_offset_hours: 12.0,
                repeat_interval_hours: Some(12.0),
            },
            12.0,
        ),
        TaskSpec {
            horizon: Horizon::Immediate,
            ..TaskSpec::below_threshold("potassium", 3.5, AnchorScheme::OnDemand, 0.0)
        },
    ];
    let mut audited = 0;
    for spec in &specs {
        let on_demand = spec.anchor == AnchorScheme::OnDemand;
        let (_, audits) = extract_dataset_audited(&cohort, spec, &dict).unwrap();
        for a in &audits {
            audited += 1;
            if let Some(t) = a
                .feature_input_times
                .iter()
                .find(|&&t| if on_demand { t >= a.t_p } else { t > a.t_p })
            {
                failures.push(format!("{} input at {t} for t_p {}", spec.anchor.name(), a.t_p));
            }
        }
    }

    let cohort_ids = cohort.ids();
    let (train_part, test_part) = cohort_ids.split_at(220);
    let train_set: HashSet<&str> = train_part.iter().map(String::as_str).collect();
    let test_set: HashSet<&str> = test_part.iter().map(String::as_str).collect();
    let full = extract_dataset(&cohort, &specs[0], &dict).unwrap();
    let train_ds = full.restrict(&train_set);
    let model = train(&train_ds, 1.0, &TrainConfig::default()).unwrap();
    let direct = Standardizer::fit(train_ds.examples.iter().map(|e| e.features.as_slice()), dict.len()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tampered = full.clone();
    for e in &mut tampered.examples {
        if test_set.contains(e.admission_id.as_str()) {
            e.features.iter_mut().for_each(|v| *v = rng.random_range(-1e4..1e4));
            e.label = 1 - e.label;
        }
    }
    let again = train(&tampered.restrict(&train_set), 1.0, &TrainConfig::default()).unwrap();
    if model.standardizer != direct || again.standardizer != model.standardizer || again.weights != model.weights {
        failures.push("standardizer or weights moved with test contents".into());
    }

    verdict(
        6,
        failures.is_empty(),
        &format!(
            "{} violations; 100 splits x 5 folds, {audited} audited examples {:?}",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_7_numerics() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0007);
    let mut worst_rel = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..6);
        let n = rng.random_range(5..60);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        y[0] = 0;
        y[1] = 1;
        let c = 10f64.powf(rng.random_range(-2.0..2.0));
        let obj = Objective::new(x, &y, d, c).unwrap();
        let theta: Vec<f64> = (0..=obj.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = obj.gradient(&theta);
        let h = 1e-5;
        let fd: Vec<f64> = (0..theta.len())
            .map(|j| {
                let (mut up, mut down) = (theta.clone(), theta.clone());
                up[j] += h;
                down[j] -= h;
                (obj.value(&up) - obj.value(&down)) / (2.0 * h)
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst_rel = worst_rel.max(norm(&diff) / norm(&g).max(norm(&fd)).max(1e-12));
    }

    let cohort = generate_cohort(&SynthConfig {
        n_admissions: 400,
        seed: 77,
        ..SynthConfig::reference()
    })
    .unwrap();
    let dict = build_dictionary(&cohort, 0.05);
    let ds = extract_dataset(
        &cohort,
        &TaskSpec::mortality(AnchorScheme::AdmissionAnchored {
            first_offset_hours: 12.0,
            repeat_interval_hours: Some(12.0),
        }),
        &dict,
    )
    .unwrap();
    let model_json = || {
        let m = train(&ds, 1.0, &TrainConfig::default()).unwrap();
        let mut buf = Vec::new();
        m.write_json(&mut buf).unwrap();
        (m.diagnostics.converged, m.diagnostics.gradient_norm, buf)
    };
    let (converged, grad_norm, first) = model_json();
    let (_, _, second) = model_json();
    let models_identical = first == second;

    // the manifest echoes the output directory, so reruns share one
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut config = shipped_config("fig2-hypokalemia").unwrap();
    config.cohort.n_admissions = Some(400);
    let snapshot = || {
        run_experiment(
            &config,
            &RunOptions {
                repeats: Some(3),
                out_dir: Some(out.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        report(&out).unwrap();
        let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for e in fs::read_dir(&out).unwrap() {
            let e = e.unwrap();
            files.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap());
        }
        fs::remove_dir_all(&out).unwrap();
        files
    };
    let (before, after) = (snapshot(), snapshot());
    let files: Vec<&String> = before.keys().collect();
    let differing: Vec<&String> = before.keys().filter(|f| before.get(*f) != after.get(*f)).collect();

    let ok = worst_rel <= 1e-5 && converged && grad_norm <= 1e-6 && models_identical && differing.is_empty();
    verdict(
        7,
        ok,
        &format!(
            "worst gradient rel. error {worst_rel:.2e} over 100 points, converged {converged} with |g| {grad_norm:.2e}, \
             model JSON identical {models_identical}, run files compared {files:?}, differing {differing:?}"
        ),
    );
}

#[test]
fn criterion_8_calibration() {
    let cohort = generate_cohort(&SynthConfig::reference()).unwrap();
    let median_days = cohort.median_los_hours().unwrap() / 24.0;
    let mortality = cohort.admissions.iter().filter(|a| a.died_in_hospital).count() as f64 / cohort.len() as f64;
    verdict(
        8,
        (5.5..=8.5).contains(&median_days) && (0.05..=0.15).contains(&mortality),
        &format!("median LOS {median_days:.2} days, mortality {:.1}% over {} admissions", 100.0 * mortality, cohort.len()),
    );
}
