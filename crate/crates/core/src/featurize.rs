//! Labeled feature rows at a per-patient index date.
//!
//! Three feature modes share the same labeling:
//!
//! * `bucketed`: for each service, event totals over the Δ most recent
//!   δ-day blocks before the index date.
//! * `count`: per-service totals over all history before the index date.
//! * `count_td`: counts plus days from the diagnosis event to each service's
//!   first occurrence.
//!
//! Demographics are appended last. Training rows use the treatment day as
//! index date for patients treated on or before the split day and the split
//! day for everyone else (negatives are Bernoulli(q) subsampled). Scoring
//! rows cover the untreated-at-split cohort at the split day.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::{service_counts, ClaimsDataset, PatientId, PatientRecord};
use crate::error::{Error, Result};
use crate::fmt::sig;

/// Value of a time-difference entry for a service not yet received.
pub const TD_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Bucketed,
    Count,
    CountTd,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [FeatureMode::Bucketed, FeatureMode::Count, FeatureMode::CountTd];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Bucketed => "bucketed",
            FeatureMode::Count => "count",
            FeatureMode::CountTd => "count_td",
        }
    }

    /// Row width for `services` services and `demographics` demographic columns.
    pub fn width(self, services: usize, num_intervals: usize, demographics: usize) -> usize {
        match self {
            FeatureMode::Bucketed => services * num_intervals + demographics,
            FeatureMode::Count => services + demographics,
            FeatureMode::CountTd => 2 * services + demographics,
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// δ: bucket length in days.
    pub delta: usize,
    /// Δ: number of buckets.
    pub num_intervals: usize,
    /// q: inclusion probability for training negatives.
    pub neg_inclusion_prob: f64,
    pub split_day: usize,
    /// H: look-forward window after the split day.
    pub horizon: usize,
    pub mode: FeatureMode,
    pub sampling_seed: u64,
    pub normalize: bool,
    /// Service whose first event marks the diagnosis date (count_td only).
    pub diagnosis_service: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            delta: 91,
            num_intervals: 2,
            neg_inclusion_prob: 0.3,
            split_day: 1_046,
            horizon: 365,
            mode: FeatureMode::Bucketed,
            sampling_seed: 7,
            normalize: true,
            diagnosis_service: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self, dataset: &ClaimsDataset) -> Result<()> {
        if self.delta < 1 || self.num_intervals < 1 {
            return Err(Error::Config("delta and num_intervals must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.neg_inclusion_prob) {
            return Err(Error::Config(format!(
                "neg_inclusion_prob = {} must lie in [0, 1]",
                self.neg_inclusion_prob
            )));
        }
        if self.split_day > dataset.days() {
            return Err(Error::OutOfRange {
                what: "split_day",
                value: self.split_day as i64,
                bound: dataset.days() as i64 + 1,
            });
        }
        if self.mode == FeatureMode::CountTd && self.diagnosis_service >= dataset.services() {
            return Err(Error::Config(format!(
                "diagnosis_service {} outside [0, {})",
                self.diagnosis_service,
                dataset.services()
            )));
        }
        if self.delta * self.num_intervals > self.split_day {
            log::warn!(
                "look-back of {} days exceeds split_day {}",
                self.delta * self.num_intervals,
                self.split_day
            );
        }
        Ok(())
    }

    pub fn width(&self, dataset: &ClaimsDataset) -> usize {
        self.mode
            .width(dataset.services(), self.num_intervals, dataset.demographic_width())
    }
}

fn check_index_day(dataset: &ClaimsDataset, index_day: usize) -> Result<()> {
    if index_day > dataset.days() {
        return Err(Error::OutOfRange {
            what: "index_day",
            value: index_day as i64,
            bound: dataset.days() as i64 + 1,
        });
    }
    Ok(())
}

/// Bucketed service totals before `index_day`, ordered service-major:
/// `[l(0,1) .. l(0,Δ), l(1,1) .. l(1,Δ), ..]`.
///
/// Bucket τ (1-based) sums days `[index_day - τδ, index_day - (τ-1)δ)`;
/// days before the start of the data contribute nothing.
pub fn bucket_features(
    dataset: &ClaimsDataset,
    patient_id: PatientId,
    index_day: usize,
    delta: usize,
    num_intervals: usize,
) -> Result<Vec<u64>> {
    check_index_day(dataset, index_day)?;
    if delta == 0 || num_intervals == 0 {
        return Err(Error::Config("delta and num_intervals must be >= 1".into()));
    }
    let mut out = vec![0u64; dataset.services() * num_intervals];
    let lookback = index_day.saturating_sub(delta * num_intervals);
    for cell in dataset.history(patient_id)? {
        if cell.day >= index_day {
            break;
        }
        if cell.day < lookback {
            continue;
        }
        let bucket = (index_day - 1 - cell.day) / delta;
        out[cell.service * num_intervals + bucket] += u64::from(cell.count);
    }
    Ok(out)
}

/// Days from the diagnosis event to each service's first occurrence, using
/// only events before `index_day`. Services not yet seen get
/// [`TD_SENTINEL`]; if the diagnosis service itself has not occurred every
/// entry is the sentinel.
pub fn time_difference_features(
    dataset: &ClaimsDataset,
    patient_id: PatientId,
    index_day: usize,
    diagnosis_service: usize,
) -> Result<Vec<f64>> {
    check_index_day(dataset, index_day)?;
    let mut first: Vec<Option<usize>> = vec![None; dataset.services()];
    for cell in dataset.history(patient_id)? {
        if cell.day >= index_day {
            break;
        }
        first[cell.service].get_or_insert(cell.day);
    }
    let Some(diagnosis) = first.get(diagnosis_service).copied().flatten() else {
        return Ok(vec![TD_SENTINEL; dataset.services()]);
    };
    Ok(first
        .iter()
        .map(|f| f.map_or(TD_SENTINEL, |d| d as f64 - diagnosis as f64))
        .collect())
}

/// Feature vector for one patient at `index_day` under `config.mode`.
pub fn feature_vector(
    dataset: &ClaimsDataset,
    patient: &PatientRecord,
    index_day: usize,
    config: &FeatureConfig,
) -> Result<Vec<f64>> {
    let id = patient.patient_id;
    let mut v = Vec::with_capacity(config.width(dataset));
    match config.mode {
        FeatureMode::Bucketed => {
            let buckets = bucket_features(dataset, id, index_day, config.delta, config.num_intervals)?;
            v.extend(buckets.into_iter().map(|c| c as f64));
        }
        FeatureMode::Count => {
            v.extend(service_counts(dataset, id, index_day)?.into_iter().map(|c| c as f64));
        }
        FeatureMode::CountTd => {
            v.extend(service_counts(dataset, id, index_day)?.into_iter().map(|c| c as f64));
            v.extend(time_difference_features(dataset, id, index_day, config.diagnosis_service)?);
        }
    }
    v.extend_from_slice(&patient.demographics);
    Ok(v)
}

pub fn feature_names(dataset: &ClaimsDataset, config: &FeatureConfig) -> Vec<String> {
    let services = dataset.services();
    let mut names = Vec::with_capacity(config.width(dataset));
    match config.mode {
        FeatureMode::Bucketed => {
            for i in 0..services {
                for tau in 1..=config.num_intervals {
                    names.push(format!("svc{i}_b{tau}"));
                }
            }
        }
        FeatureMode::Count => names.extend((0..services).map(|i| format!("svc{i}_count"))),
        FeatureMode::CountTd => {
            names.extend((0..services).map(|i| format!("svc{i}_count")));
            names.extend((0..services).map(|i| format!("svc{i}_td")));
        }
    }
    names.extend((0..dataset.demographic_width()).map(|j| format!("demo{j}")));
    names
}

/// Per-column standardization. Columns whose training values are all 0/1
/// are left as is (mean 0, stdev 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
}

impl NormStats {
    pub fn fit(rows: &[FeatureRow]) -> Self {
        let width = rows.first().map_or(0, |r| r.features.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        let mut stdev = vec![1.0; width];
        for col in 0..width {
            let values = rows.iter().map(|r| r.features[col]);
            if values.clone().all(|v| v == 0.0 || v == 1.0) {
                continue;
            }
            let m = values.clone().sum::<f64>() / n;
            let var = values.map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[col] = m;
            if var > 0.0 {
                stdev[col] = var.sqrt();
            }
        }
        Self { mean, stdev }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &mut [f64]) {
        for ((v, m), s) in features.iter_mut().zip(&self.mean).zip(&self.stdev) {
            *v = (*v - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub patient_id: PatientId,
    pub index_day: usize,
    pub features: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub rows: Vec<FeatureRow>,
    pub feature_names: Vec<String>,
    pub mode: FeatureMode,
    /// Standardization already applied to `rows`, if any.
    pub normalization: Option<NormStats>,
}

impl LabeledMatrix {
    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Writes the matrix as CSV: feature columns, then `label`, `patient_id`,
    /// `index_day`. Floats carry 9 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let mut header = self.feature_names.join(",");
        if !header.is_empty() {
            header.push(',');
        }
        writeln!(out, "{header}label,patient_id,index_day").map_err(io)?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for v in &row.features {
                line.push_str(&sig(*v, 9));
                line.push(',');
            }
            line.push_str(&format!("{},{},{}", row.label, row.patient_id, row.index_day));
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn assemble(
    dataset: &ClaimsDataset,
    config: &FeatureConfig,
    picks: Vec<(&PatientRecord, usize, u8)>,
) -> Result<Vec<FeatureRow>> {
    picks
        .into_par_iter()
        .map(|(patient, index_day, label)| {
            Ok(FeatureRow {
                patient_id: patient.patient_id,
                index_day,
                features: feature_vector(dataset, patient, index_day, config)?,
                label,
            })
        })
        .collect()
}

/// Training rows: treated-by-split patients at their treatment day (label 1)
/// and a Bernoulli(q) sample of everyone else at the split day (label 0).
pub fn build_training_matrix(dataset: &ClaimsDataset, config: &FeatureConfig) -> Result<LabeledMatrix> {
    config.validate(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.sampling_seed);
    let mut picks = Vec::new();
    for patient in dataset.patients() {
        match patient.treatment_day {
            Some(day) if day <= config.split_day => picks.push((patient, day, 1)),
            _ => {
                if rng.random_bool(config.neg_inclusion_prob) {
                    picks.push((patient, config.split_day, 0));
                }
            }
        }
    }
    let positives = picks.iter().filter(|p| p.2 == 1).count();
    if positives == 0 {
        return Err(Error::Untrainable("no patient treated on or before the split day".into()));
    }
    if positives == picks.len() {
        return Err(Error::Untrainable("no negatives sampled".into()));
    }

    let mut rows = assemble(dataset, config, picks)?;
    let normalization = config.normalize.then(|| {
        let stats = NormStats::fit(&rows);
        for row in &mut rows {
            stats.apply(&mut row.features);
        }
        stats
    });
    Ok(LabeledMatrix {
        rows,
        feature_names: feature_names(dataset, config),
        mode: config.mode,
        normalization,
    })
}

/// Scoring rows: every patient untreated on the split day, featurized at the
/// split day. Labels mark treatment within `(split_day, split_day + horizon]`
/// and are meant for the evaluator only. `normalization` should be the
/// training matrix's statistics.
pub fn build_scoring_matrix(
    dataset: &ClaimsDataset,
    config: &FeatureConfig,
    normalization: Option<&NormStats>,
) -> Result<LabeledMatrix> {
    config.validate(dataset)?;
    if config.split_day + config.horizon > dataset.days() {
        return Err(Error::OutOfRange {
            what: "split_day + horizon",
            value: (config.split_day + config.horizon) as i64,
            bound: dataset.days() as i64 + 1,
        });
    }
    if config.normalize && normalization.is_none() {
        return Err(Error::Config(
            "normalize is set but no training statistics were supplied".into(),
        ));
    }
    let width = config.width(dataset);
    if let Some(stats) = normalization {
        if stats.width() != width {
            return Err(Error::Dimension {
                expected: width,
                found: stats.width(),
            });
        }
    }

    let picks: Vec<_> = dataset
        .patients()
        .iter()
        .filter(|p| p.treatment_day.is_none_or(|d| d > config.split_day))
        .map(|p| {
            let future = p
                .treatment_day
                .is_some_and(|d| d <= config.split_day + config.horizon);
            (p, config.split_day, u8::from(future))
        })
        .collect();
    let mut rows = assemble(dataset, config, picks)?;
    if let Some(stats) = normalization {
        for row in &mut rows {
            stats.apply(&mut row.features);
        }
    }
    Ok(LabeledMatrix {
        rows,
        feature_names: feature_names(dataset, config),
        mode: config.mode,
        normalization: normalization.cloned(),
    })
}
