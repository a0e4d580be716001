#![allow(dead_code)]

//! Random panels and brute-force oracles that work from the raw event list,
//! never from the dataset's own indexes.

use claimcast::claims::{ClaimsDataset, Dims, PatientId, PatientRecord, ServiceEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Panel {
    pub dataset: ClaimsDataset,
    pub events: Vec<ServiceEvent>,
}

pub fn random_panel(seed: u64, patients: usize, days: usize, services: usize, demographics: usize) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        days,
        services,
        demographics,
    };
    let records: Vec<PatientRecord> = (0..patients as PatientId)
        .map(|id| PatientRecord {
            patient_id: id * 3 + 1,
            demographics: (0..demographics).map(|_| rng.random_range(-2.0..2.0)).collect(),
            treatment_day: rng.random_bool(0.4).then(|| rng.random_range(0..days)),
        })
        .collect();
    let mut events = Vec::new();
    for p in &records {
        let n = rng.random_range(0..4 * days.min(60));
        for _ in 0..n {
            events.push(ServiceEvent {
                patient_id: p.patient_id,
                service_id: rng.random_range(0..services),
                day: rng.random_range(0..days),
                count: rng.random_range(1..3),
            });
        }
    }
    let dataset = ClaimsDataset::from_parts(dims, records, events.clone()).unwrap();
    Panel { dataset, events }
}

/// Dense `w[service][day]` counts for one patient.
pub fn dense_grid(events: &[ServiceEvent], patient: PatientId, days: usize, services: usize) -> Vec<Vec<u64>> {
    let mut w = vec![vec![0u64; days]; services];
    for e in events.iter().filter(|e| e.patient_id == patient) {
        w[e.service_id][e.day] += u64::from(e.count);
    }
    w
}

/// Bucket τ sums days ν from `t - τδ` through `t - (τ-1)δ - 1`; days before
/// zero are skipped. Service-major output.
pub fn brute_buckets(w: &[Vec<u64>], t: usize, delta: usize, intervals: usize) -> Vec<u64> {
    let mut out = Vec::new();
    for row in w {
        for tau in 1..=intervals {
            let lo = t as i64 - (tau * delta) as i64;
            let hi = t as i64 - ((tau - 1) * delta) as i64 - 1;
            let mut sum = 0;
            let mut nu = hi;
            while nu >= lo {
                if nu >= 0 {
                    sum += row[nu as usize];
                }
                nu -= 1;
            }
            out.push(sum);
        }
    }
    out
}

/// Per-service totals on days `[from, to)`.
pub fn brute_window(w: &[Vec<u64>], from: usize, to: usize) -> Vec<u64> {
    w.iter().map(|row| row[from..to].iter().sum()).collect()
}
