mod common;

use claimcast::claims::{ClaimsDataset, Dims, PatientRecord, ServiceEvent};
use claimcast::featurize::{
    bucket_features, build_scoring_matrix, build_training_matrix, feature_vector, time_difference_features,
    FeatureConfig, FeatureMode, TD_SENTINEL,
};
use claimcast::synthgen::{generate, SynthConfig};
use proptest::prelude::*;
use tempfile::TempDir;

/// T = 8, I = 3 panel where w(i, d) on 1-based day d is `100 * (i + 1) + d`.
fn ramp_panel() -> ClaimsDataset {
    let dims = Dims {
        days: 8,
        services: 3,
        demographics: 0,
    };
    let patient = PatientRecord {
        patient_id: 0,
        demographics: vec![],
        treatment_day: None,
    };
    let events = (0..3).flat_map(|i| {
        (1..=8).map(move |d| ServiceEvent {
            patient_id: 0,
            service_id: i,
            day: d - 1,
            count: (100 * (i + 1) + d) as u32,
        })
    });
    ClaimsDataset::from_parts(dims, vec![patient], events).unwrap()
}

fn w(i: usize, d: usize) -> u64 {
    (100 * (i + 1) + d) as u64
}

#[test]
fn two_buckets_of_two_days_on_ramp_panel() {
    let ds = ramp_panel();
    // 1-based index date t = 5 is 0-based day 4.
    let b = bucket_features(&ds, 0, 4, 2, 2).unwrap();
    for i in 0..3 {
        assert_eq!(b[2 * i], w(i, 3) + w(i, 4), "service {i} bucket 1");
        assert_eq!(b[2 * i + 1], w(i, 1) + w(i, 2), "service {i} bucket 2");
    }
    // t = 8: a later index date.
    let b = bucket_features(&ds, 0, 7, 2, 2).unwrap();
    for i in 0..3 {
        assert_eq!(b[2 * i], w(i, 6) + w(i, 7));
        assert_eq!(b[2 * i + 1], w(i, 4) + w(i, 5));
    }
}

#[test]
fn empty_history_gives_zero_buckets() {
    let dims = Dims {
        days: 20,
        services: 4,
        demographics: 0,
    };
    let p = PatientRecord {
        patient_id: 3,
        demographics: vec![],
        treatment_day: None,
    };
    let ds = ClaimsDataset::from_parts(dims, vec![p], vec![]).unwrap();
    assert_eq!(bucket_features(&ds, 3, 20, 5, 3).unwrap(), vec![0; 12]);
    assert_eq!(time_difference_features(&ds, 3, 20, 0).unwrap(), vec![TD_SENTINEL; 4]);
}

#[test]
fn buckets_match_day_loop_oracle() {
    for seed in 0..10 {
        let panel = common::random_panel(seed, 50, 200, 5, 1);
        for p in panel.dataset.patients() {
            let grid = common::dense_grid(&panel.events, p.patient_id, 200, 5);
            for t in [0, 1, 6, 27, 28, 29, 100, 199, 200] {
                assert_eq!(
                    bucket_features(&panel.dataset, p.patient_id, t, 7, 4).unwrap(),
                    common::brute_buckets(&grid, t, 7, 4),
                    "seed {seed} patient {} t {t}",
                    p.patient_id
                );
            }
        }
    }
}

#[test]
fn time_differences_match_first_occurrence_scan() {
    for seed in 0..5 {
        let panel = common::random_panel(seed, 30, 60, 4, 1);
        for p in panel.dataset.patients() {
            for t in [0, 10, 30, 60] {
                let mut first = [None::<usize>; 4];
                for e in &panel.events {
                    if e.patient_id == p.patient_id && e.day < t {
                        first[e.service_id] = Some(first[e.service_id].map_or(e.day, |d| d.min(e.day)));
                    }
                }
                let expected: Vec<f64> = match first[2] {
                    None => vec![TD_SENTINEL; 4],
                    Some(dx) => first
                        .iter()
                        .map(|f| f.map_or(TD_SENTINEL, |d| d as f64 - dx as f64))
                        .collect(),
                };
                assert_eq!(time_difference_features(&panel.dataset, p.patient_id, t, 2).unwrap(), expected);
            }
        }
    }
}

#[test]
fn default_parameters_give_eighty_features() {
    assert_eq!(FeatureMode::Bucketed.width(26, 2, 28), 80);
    assert_eq!(FeatureMode::Count.width(26, 2, 28), 54);
    assert_eq!(FeatureMode::CountTd.width(26, 2, 28), 80);
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        patients: 2_000,
        seed: 5,
        ..SynthConfig::default()
    }
}

fn raw(mode: FeatureMode) -> FeatureConfig {
    FeatureConfig {
        mode,
        normalize: false,
        ..FeatureConfig::default()
    }
}

#[test]
fn widths_on_synthetic_data() {
    let ds = generate(&small_synth()).unwrap();
    for mode in FeatureMode::ALL {
        let m = build_training_matrix(&ds, &raw(mode)).unwrap();
        let expected = mode.width(26, 2, 28);
        assert_eq!(m.width(), expected);
        assert!(m.rows.iter().all(|r| r.features.len() == expected));
    }
}

#[test]
fn full_inclusion_takes_every_negative_once() {
    let ds = generate(&small_synth()).unwrap();
    let cfg = FeatureConfig {
        neg_inclusion_prob: 1.0,
        ..raw(FeatureMode::Count)
    };
    let m = build_training_matrix(&ds, &cfg).unwrap();
    assert_eq!(m.len(), ds.len());
    let eligible = ds
        .patients()
        .iter()
        .filter(|p| p.treatment_day.is_none_or(|d| d > cfg.split_day))
        .count();
    assert_eq!(m.negatives(), eligible);
    let mut ids: Vec<_> = m.rows.iter().map(|r| r.patient_id).collect();
    ids.dedup();
    assert_eq!(ids.len(), m.len());
}

#[test]
fn training_rows_never_label_future_treatment_positive() {
    let ds = generate(&small_synth()).unwrap();
    let cfg = raw(FeatureMode::Bucketed);
    let m = build_training_matrix(&ds, &cfg).unwrap();
    for row in &m.rows {
        let t = ds.patient(row.patient_id).unwrap().treatment_day;
        match row.label {
            1 => assert_eq!(Some(row.index_day), t.filter(|&d| d <= cfg.split_day)),
            _ => {
                assert_eq!(row.index_day, cfg.split_day);
                assert!(t.is_none_or(|d| d > cfg.split_day));
            }
        }
    }
}

#[test]
fn sampling_is_seeded() {
    let ds = generate(&small_synth()).unwrap();
    let a = build_training_matrix(&ds, &raw(FeatureMode::Bucketed)).unwrap();
    let b = build_training_matrix(&ds, &raw(FeatureMode::Bucketed)).unwrap();
    assert_eq!(a, b);
    let c = build_training_matrix(
        &ds,
        &FeatureConfig {
            sampling_seed: 99,
            ..raw(FeatureMode::Bucketed)
        },
    )
    .unwrap();
    assert_ne!(
        a.rows.iter().map(|r| r.patient_id).collect::<Vec<_>>(),
        c.rows.iter().map(|r| r.patient_id).collect::<Vec<_>>()
    );
}

#[test]
fn scoring_cohort_size_is_untreated_at_split() {
    let ds = generate(&SynthConfig::default()).unwrap();
    let cfg = raw(FeatureMode::Bucketed);
    let s = build_scoring_matrix(&ds, &cfg, None).unwrap();
    let treated = ds
        .patients()
        .iter()
        .filter(|p| p.treatment_day.is_some_and(|d| d <= cfg.split_day))
        .count();
    assert_eq!(s.len(), ds.len() - treated);
    assert!(s.rows.iter().all(|r| r.index_day == cfg.split_day));
}

#[test]
fn all_treated_before_split_gives_empty_cohort() {
    let dims = Dims {
        days: 50,
        services: 2,
        demographics: 0,
    };
    let patients = (0..5)
        .map(|id| PatientRecord {
            patient_id: id,
            demographics: vec![],
            treatment_day: Some(id as usize),
        })
        .collect();
    let ds = ClaimsDataset::from_parts(dims, patients, vec![]).unwrap();
    let cfg = FeatureConfig {
        split_day: 30,
        horizon: 10,
        ..raw(FeatureMode::Bucketed)
    };
    assert!(build_scoring_matrix(&ds, &cfg, None).unwrap().is_empty());
}

#[test]
fn cohort_base_rate_ratio() {
    let rate: f64 = 6_909.0 / 123_260.0 * 100.0;
    assert!((rate - 5.61).abs() < 0.005, "{rate}");
}

#[test]
fn csv_layout() {
    let ds = ramp_panel();
    let dir = TempDir::new().unwrap();
    let ds = ClaimsDataset::from_parts(
        ds.dims(),
        vec![
            PatientRecord {
                patient_id: 0,
                demographics: vec![],
                treatment_day: Some(5),
            },
            PatientRecord {
                patient_id: 1,
                demographics: vec![],
                treatment_day: None,
            },
        ],
        ds.events(),
    )
    .unwrap();
    let cfg = FeatureConfig {
        delta: 2,
        num_intervals: 2,
        neg_inclusion_prob: 1.0,
        split_day: 6,
        horizon: 2,
        ..raw(FeatureMode::Bucketed)
    };
    let m = build_training_matrix(&ds, &cfg).unwrap();
    let path = dir.path().join("m.csv");
    m.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "svc0_b1,svc0_b2,svc1_b1,svc1_b2,svc2_b1,svc2_b2,label,patient_id,index_day");
    assert_eq!(lines[1], "209,205,409,405,609,605,1,0,5");
    assert_eq!(lines[2], "0,0,0,0,0,0,0,1,6");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn buckets_partition_the_lookback_window(
        seed in 0u64..10_000,
        delta in 1usize..=10,
        intervals in 1usize..=5,
        t in 0usize..=120,
    ) {
        let panel = common::random_panel(seed, 10, 120, 3, 0);
        for p in panel.dataset.patients() {
            let grid = common::dense_grid(&panel.events, p.patient_id, 120, 3);
            let b = bucket_features(&panel.dataset, p.patient_id, t, delta, intervals).unwrap();
            let window = common::brute_window(&grid, t.saturating_sub(delta * intervals), t);
            for (i, total) in window.iter().enumerate() {
                prop_assert_eq!(b[i * intervals..(i + 1) * intervals].iter().sum::<u64>(), *total);
            }
        }
    }

    #[test]
    fn features_ignore_events_on_or_after_index(
        seed in 0u64..10_000,
        t in 0usize..=60,
        mode_idx in 0usize..3,
        extra in proptest::collection::vec((0usize..3, 0usize..60, 1u32..5), 1..20),
    ) {
        let panel = common::random_panel(seed, 5, 60, 3, 2);
        let cfg = FeatureConfig {
            delta: 4,
            num_intervals: 3,
            diagnosis_service: 1,
            ..raw(FeatureMode::ALL[mode_idx])
        };
        // add or drop only events dated >= t
        let mut mutated: Vec<ServiceEvent> = panel.events.iter().copied().filter(|e| e.day < t).collect();
        for (p, (s, d, c)) in panel.dataset.patients().iter().zip(extra.iter().cycle()) {
            if *d >= t {
                mutated.push(ServiceEvent { patient_id: p.patient_id, service_id: *s, day: *d, count: *c });
            }
        }
        let other = ClaimsDataset::from_parts(
            panel.dataset.dims(),
            panel.dataset.patients().to_vec(),
            mutated,
        ).unwrap();
        for p in panel.dataset.patients() {
            let a = feature_vector(&panel.dataset, p, t, &cfg).unwrap();
            let b = feature_vector(&other, p, t, &cfg).unwrap();
            prop_assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
