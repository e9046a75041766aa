mod common;

use std::collections::HashSet;

use ehrindex::features::build_dictionary;
use ehrindex::indexing::{extract_dataset, extract_dataset_audited, label_at, prediction_times, LabelSource};
use ehrindex::{Admission, AnchorScheme, Cohort, Horizon, LabelOutcome, LabelPolicy, TaskSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn hypo(anchor: AnchorScheme, horizon: Horizon, policy: LabelPolicy) -> TaskSpec {
    let mut t = TaskSpec::below_threshold("potassium", 3.5, anchor, 12.0);
    t.horizon = horizon;
    t.label_policy = policy;
    t
}

fn rolling(first: f64, step: f64) -> AnchorScheme {
    AnchorScheme::AdmissionAnchored {
        first_offset_hours: first,
        repeat_interval_hours: Some(step),
    }
}

#[test]
fn threshold_labels_match_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let specs = [
        hypo(rolling(12.0, 12.0), Horizon::Fixed { hours: 12.0 }, LabelPolicy::ObservedOrHold),
        hypo(rolling(0.0, 4.0), Horizon::Fixed { hours: 6.0 }, LabelPolicy::ObservedOnly),
        hypo(AnchorScheme::OnDemand, Horizon::Immediate, LabelPolicy::ObservedOrHold),
        hypo(
            AnchorScheme::EventAnchored {
                lead_hours: 12.0,
                repeat_interval_hours: None,
            },
            Horizon::Fixed { hours: 12.0 },
            LabelPolicy::ObservedOrHold,
        ),
    ];
    for i in 0..1000 {
        let a = common::random_stream(&mut rng, &format!("S{i}"));
        for spec in &specs {
            for p in prediction_times(&a, spec) {
                assert_eq!(label_at(&a, p.t_p, spec), common::oracle_label(&a, p.t_p, spec), "{a:?} at {}", p.t_p);
            }
        }
    }
}

proptest! {
    #[test]
    fn rolling_count_is_floor_formula(los_q in 1u32..4000, first_q in 0u32..400, step_q in 1u32..200) {
        let (los, first, step) = (f64::from(los_q) / 8.0, f64::from(first_q) / 8.0, f64::from(step_q) / 8.0);
        let spec = TaskSpec::mortality(rolling(first, step));
        let n = prediction_times(&Admission::new("A", los, false), &spec).len();
        let expected = if los >= first { ((los - first) / step).floor() as usize + 1 } else { 0 };
        prop_assert_eq!(n, expected);
    }

    #[test]
    fn observed_only_agrees_when_window_has_data(adm in common::arb_admission("A".into()), step in 1u32..24) {
        let hold = hypo(rolling(0.0, f64::from(step)), Horizon::Fixed { hours: 12.0 }, LabelPolicy::ObservedOrHold);
        let only = TaskSpec { label_policy: LabelPolicy::ObservedOnly, ..hold.clone() };
        for p in prediction_times(&adm, &hold) {
            let in_window = adm.events_of("potassium").any(|e| e.time > p.t_p && e.time <= p.t_p + 12.0);
            let o = label_at(&adm, p.t_p, &only);
            if in_window {
                prop_assert_eq!(o, label_at(&adm, p.t_p, &hold));
            } else {
                prop_assert_eq!(o, LabelOutcome::Dropped);
            }
        }
    }

    #[test]
    fn extraction_is_permutation_invariant(cohort in common::arb_cohort(10), seed in any::<u64>()) {
        let dict = build_dictionary(&cohort, 0.0);
        prop_assume!(!dict.is_empty());
        let spec = hypo(rolling(2.0, 6.0), Horizon::Fixed { hours: 12.0 }, LabelPolicy::ObservedOrHold);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut admissions = cohort.admissions.clone();
        admissions.shuffle(&mut rng);
        for a in &mut admissions {
            a.events.shuffle(&mut rng);
        }
        let shuffled = Cohort::from_admissions(admissions);
        let mut a = extract_dataset(&cohort, &spec, &dict).unwrap().examples;
        let mut b = extract_dataset(&shuffled, &spec, &dict).unwrap().examples;
        let key = |e: &ehrindex::Example| (e.admission_id.clone(), e.t_p.to_bits());
        a.sort_by_key(key);
        b.sort_by_key(key);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((&x.admission_id, x.t_p, x.label), (&y.admission_id, y.t_p, y.label));
            for (u, v) in x.features.iter().zip(&y.features) {
                // means of tied timestamps may be summed in another order
                prop_assert!((u.is_nan() && v.is_nan()) || (u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn audited_extraction_never_looks_ahead(cohort in common::arb_cohort(10)) {
        let dict = build_dictionary(&cohort, 0.0);
        prop_assume!(!dict.is_empty());
        let specs = [
            hypo(rolling(0.0, 5.0), Horizon::Fixed { hours: 12.0 }, LabelPolicy::ObservedOrHold),
            hypo(AnchorScheme::OnDemand, Horizon::Immediate, LabelPolicy::ObservedOrHold),
            TaskSpec::mortality(AnchorScheme::EventAnchored { lead_hours: 6.0, repeat_interval_hours: Some(6.0) }),
        ];
        for spec in &specs {
            let on_demand = spec.anchor == AnchorScheme::OnDemand;
            let (ds, audits) = extract_dataset_audited(&cohort, spec, &dict).unwrap();
            prop_assert_eq!(ds.len(), audits.len());
            for a in &audits {
                for &t in &a.feature_input_times {
                    let visible = if on_demand { t < a.t_p } else { t <= a.t_p };
                    prop_assert!(visible, "input at {} for t_p {}", t, a.t_p);
                    prop_assert!(t > a.t_p - spec.lookback_hours);
                }
                match &a.label_source {
                    LabelSource::Window(ts) => prop_assert!(ts.iter().all(|&t| t > a.t_p)),
                    LabelSource::Held(t) => prop_assert!(*t <= a.t_p),
                    LabelSource::AtPrediction(ts) => prop_assert!(on_demand && ts.iter().all(|&t| t == a.t_p)),
                    LabelSource::EndOfStay => prop_assert!(matches!(spec.outcome, ehrindex::Outcome::TerminalEvent)),
                    LabelSource::None => prop_assert!(false, "labeled example without a label source"),
                }
            }
            let ids: HashSet<&str> = ds.admission_ids().into_iter().collect();
            prop_assert!(ids.iter().all(|id| cohort.get(id).is_some()));
        }
    }
}
