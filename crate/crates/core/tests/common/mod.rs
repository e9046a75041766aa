#![allow(dead_code)]

use ehrindex::{Admission, Cohort, Horizon, LabelOutcome, LabelPolicy, ObservationEvent, TaskSpec};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const VARIABLES: [&str; 3] = ["potassium", "heart_rate", "lactate"];
pub const FLAGS: [&str; 2] = ["female", "emergency"];

/// Times on a quarter-hour grid so that window boundaries are hit exactly.
pub fn arb_admission(id: String) -> impl Strategy<Value = Admission> {
    (1u32..400, any::<bool>(), prop::collection::vec(any::<bool>(), FLAGS.len())).prop_flat_map(
        move |(los_q, died, flags)| {
            let los = f64::from(los_q) / 4.0;
            let id = id.clone();
            prop::collection::vec((0..VARIABLES.len(), 0..=los_q, 20i32..60), 0..40).prop_map(move |evs| {
                let events = evs
                    .into_iter()
                    .map(|(v, t, x)| ObservationEvent::new(VARIABLES[v], f64::from(t) / 4.0, f64::from(x) / 10.0))
                    .collect();
                let set: Vec<&str> = FLAGS.iter().zip(&flags).filter(|(_, on)| **on).map(|(f, _)| *f).collect();
                let mut a = Admission::new(id.clone(), los, died).with_flags(set).with_events(events);
                a.sort_events();
                a
            })
        },
    )
}

pub fn arb_cohort(max: usize) -> impl Strategy<Value = Cohort> {
    (1..=max).prop_flat_map(|n| {
        (0..n)
            .map(|i| arb_admission(format!("A{i:03}")))
            .collect::<Vec<_>>()
            .prop_map(Cohort::from_admissions)
    })
}

/// A random potassium stream for the label oracles.
pub fn random_stream(rng: &mut ChaCha8Rng, id: &str) -> Admission {
    let los = f64::from(rng.random_range(4u32..400)) / 4.0;
    let n = rng.random_range(0..12);
    let events = (0..n)
        .map(|_| {
            let t = f64::from(rng.random_range(0..=(los * 4.0) as u32)) / 4.0;
            ObservationEvent::new("potassium", t, f64::from(rng.random_range(25u32..50)) / 10.0)
        })
        .collect();
    let mut a = Admission::new(id, los, rng.random_bool(0.2)).with_events(events);
    a.sort_events();
    a
}

/// Window scan over every outcome event.
pub fn oracle_label(a: &Admission, t_p: f64, spec: &TaskSpec) -> LabelOutcome {
    let k: Vec<(f64, f64)> = a.events_of("potassium").map(|e| (e.time, e.value)).collect();
    let low = |v: f64| u8::from(v < 3.5);
    match spec.horizon {
        Horizon::Immediate => {
            let at: Vec<f64> = k.iter().filter(|(t, _)| *t == t_p).map(|(_, v)| *v).collect();
            if at.is_empty() {
                LabelOutcome::Dropped
            } else {
                LabelOutcome::Label(at.iter().map(|&v| low(v)).max().unwrap())
            }
        }
        Horizon::Fixed { hours } => {
            let inside: Vec<f64> = k
                .iter()
                .filter(|(t, _)| *t > t_p && *t <= t_p + hours)
                .map(|(_, v)| *v)
                .collect();
            if !inside.is_empty() {
                return LabelOutcome::Label(inside.iter().map(|&v| low(v)).max().unwrap());
            }
            let latest = k.iter().map(|(t, _)| *t).filter(|t| *t <= t_p).fold(f64::NEG_INFINITY, f64::max);
            let held: Vec<u8> = k.iter().filter(|(t, _)| *t == latest).map(|(_, v)| low(*v)).collect();
            match spec.label_policy {
                LabelPolicy::ObservedOrHold if !held.is_empty() => LabelOutcome::Label(*held.iter().max().unwrap()),
                _ => LabelOutcome::Dropped,
            }
        }
        Horizon::RemainderOfAdmission => unreachable!(),
    }
}

/// AUROC by comparing every positive with every negative.
pub fn pair_count(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &l) in labels.iter().enumerate() {
        if l != 1 {
            continue;
        }
        for (j, &m) in labels.iter().enumerate() {
            if m == 0 {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}
