//! Longitudinal claims panels: per-patient sparse service histories,
//! demographics and the (at most one) treatment day per patient.
//!
//! Days are integer offsets from a dataset epoch. Every query that takes a
//! cut-off day only looks at events strictly before it.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PatientId = u64;

/// Panel dimensions: `days` (T), `services` (I) and `demographics` (D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "T")]
    pub days: usize,
    #[serde(rename = "I")]
    pub services: usize,
    #[serde(rename = "D")]
    pub demographics: usize,
}

/// One row of the event log. `count` events of `service_id` on `day`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceEvent {
    pub patient_id: PatientId,
    pub service_id: usize,
    pub day: usize,
    pub count: u32,
}

/// A day/service cell of a patient's history with its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DailyCount {
    pub day: usize,
    pub service: usize,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    pub demographics: Vec<f64>,
    pub treatment_day: Option<usize>,
}

/// Immutable claims panel. Patients are kept sorted by id; each patient's
/// history is a sorted list of `(day, service)` cells with duplicate
/// events merged into their count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimsDataset {
    dims: Dims,
    patients: Vec<PatientRecord>,
    histories: Vec<Vec<DailyCount>>,
    index: HashMap<PatientId, usize>,
}

impl ClaimsDataset {
    /// Validates and assembles a dataset from raw parts.
    pub fn from_parts(
        dims: Dims,
        mut patients: Vec<PatientRecord>,
        events: impl IntoIterator<Item = ServiceEvent>,
    ) -> Result<Self> {
        patients.sort_by_key(|p| p.patient_id);
        let mut index = HashMap::with_capacity(patients.len());
        for (pos, p) in patients.iter().enumerate() {
            if index.insert(p.patient_id, pos).is_some() {
                return Err(Error::DuplicatePatient(p.patient_id));
            }
            if p.demographics.len() != dims.demographics {
                return Err(Error::DemographicsWidth {
                    patient_id: p.patient_id,
                    found: p.demographics.len(),
                    expected: dims.demographics,
                });
            }
            if let Some(col) = p.demographics.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(col));
            }
            if let Some(day) = p.treatment_day {
                check_range("treatment_day", day as i64, dims.days)?;
            }
        }

        let mut histories = vec![Vec::new(); patients.len()];
        for ev in events {
            let pos = *index
                .get(&ev.patient_id)
                .ok_or(Error::UnknownPatient(ev.patient_id))?;
            check_range("day", ev.day as i64, dims.days)?;
            check_range("service_id", ev.service_id as i64, dims.services)?;
            if ev.count == 0 {
                continue;
            }
            histories[pos].push(DailyCount {
                day: ev.day,
                service: ev.service_id,
                count: ev.count,
            });
        }
        for h in &mut histories {
            h.sort_by_key(|c| (c.day, c.service));
            h.dedup_by(|next, kept| {
                if next.day == kept.day && next.service == kept.service {
                    kept.count += next.count;
                    true
                } else {
                    false
                }
            });
        }

        Ok(Self {
            dims,
            patients,
            histories,
            index,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn days(&self) -> usize {
        self.dims.days
    }

    pub fn services(&self) -> usize {
        self.dims.services
    }

    pub fn demographic_width(&self) -> usize {
        self.dims.demographics
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Patients in ascending id order.
    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn patient(&self, id: PatientId) -> Result<&PatientRecord> {
        self.position(id).map(|pos| &self.patients[pos])
    }

    /// Sorted history of one patient.
    pub fn history(&self, id: PatientId) -> Result<&[DailyCount]> {
        self.position(id).map(|pos| self.histories[pos].as_slice())
    }

    /// Patients paired with their histories, in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&PatientRecord, &[DailyCount])> {
        self.patients
            .iter()
            .zip(self.histories.iter().map(Vec::as_slice))
    }

    /// Total number of events, counting multiplicity.
    pub fn event_count(&self) -> u64 {
        self.histories
            .iter()
            .flatten()
            .map(|c| u64::from(c.count))
            .sum()
    }

    /// Flattened event log in (patient, day, service) order.
    pub fn events(&self) -> impl Iterator<Item = ServiceEvent> + '_ {
        self.iter().flat_map(|(p, h)| {
            h.iter().map(move |c| ServiceEvent {
                patient_id: p.patient_id,
                service_id: c.service,
                day: c.day,
                count: c.count,
            })
        })
    }

    fn position(&self, id: PatientId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownPatient(id))
    }
}

fn check_range(what: &'static str, value: i64, bound: usize) -> Result<()> {
    if value < 0 || value >= bound as i64 {
        return Err(Error::OutOfRange {
            what,
            value,
            bound: bound as i64,
        });
    }
    Ok(())
}

/// Per-service event counts on days `< up_to_day`.
pub fn service_counts(
    dataset: &ClaimsDataset,
    patient_id: PatientId,
    up_to_day: usize,
) -> Result<Vec<u64>> {
    if up_to_day > dataset.days() {
        return Err(Error::OutOfRange {
            what: "up_to_day",
            value: up_to_day as i64,
            bound: dataset.days() as i64 + 1,
        });
    }
    let mut counts = vec![0u64; dataset.services()];
    for c in dataset.history(patient_id)? {
        if c.day >= up_to_day {
            break;
        }
        counts[c.service] += u64::from(c.count);
    }
    Ok(counts)
}

#[derive(Deserialize)]
struct EventLine {
    patient_id: i64,
    service_id: i64,
    day: i64,
    #[serde(default = "one")]
    count: i64,
}

fn one() -> i64 {
    1
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TreatmentField {
    One(i64),
    Many(Vec<i64>),
}

#[derive(Deserialize)]
struct PatientLine {
    patient_id: i64,
    demographics: Vec<f64>,
    #[serde(default)]
    treatment_day: Option<TreatmentField>,
}

#[derive(Serialize)]
struct MetaLine {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    dims: Dims,
}

#[derive(Serialize)]
struct PatientOut<'a> {
    patient_id: PatientId,
    demographics: &'a [f64],
    treatment_day: Option<usize>,
}

/// Reads the JSON lines of `path`, returning the optional meta header and
/// the remaining records with their 1-based line numbers.
type NumberedLines = Vec<(usize, serde_json::Value)>;

fn read_jsonl(path: &Path) -> Result<(Option<Dims>, NumberedLines)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut meta = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(path, lineno, e))?;
        if value.get("type").and_then(|t| t.as_str()) == Some("meta") {
            if !records.is_empty() || meta.is_some() {
                return Err(malformed(path, lineno, "meta header must be the first record"));
            }
            let dims: Dims = serde_json::from_value(value).map_err(|e| malformed(path, lineno, e))?;
            meta = Some(dims);
            continue;
        }
        records.push((lineno, value));
    }
    Ok((meta, records))
}

fn malformed(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

fn non_negative(path: &Path, line: usize, field: &str, v: i64) -> Result<u64> {
    u64::try_from(v).map_err(|_| malformed(path, line, format!("{field} must be non-negative, got {v}")))
}

/// Loads a dataset from `events.jsonl` and `patients.jsonl`.
///
/// A `{"type": "meta", "T": .., "I": .., "D": ..}` first line in either file
/// fixes the dimensions; otherwise they are inferred as max observed + 1
/// (D from the demographics width).
pub fn load_dataset(events_path: &Path, patients_path: &Path) -> Result<ClaimsDataset> {
    let (events_meta, event_lines) = read_jsonl(events_path)?;
    let (patients_meta, patient_lines) = read_jsonl(patients_path)?;
    let meta = match (events_meta, patients_meta) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!(
                "meta headers disagree: {a:?} in events, {b:?} in patients"
            )))
        }
        (a, b) => a.or(b),
    };

    let mut patients = Vec::with_capacity(patient_lines.len());
    for (lineno, value) in patient_lines {
        let rec: PatientLine =
            serde_json::from_value(value).map_err(|e| malformed(patients_path, lineno, e))?;
        let patient_id = non_negative(patients_path, lineno, "patient_id", rec.patient_id)?;
        let treatment_day = match rec.treatment_day {
            None => None,
            Some(TreatmentField::One(d)) => Some(d),
            Some(TreatmentField::Many(days)) => {
                if days.len() > 1 {
                    log::warn!(
                        "patient {patient_id}: {} treatment days, keeping the first",
                        days.len()
                    );
                }
                days.into_iter().min()
            }
        };
        let treatment_day = match treatment_day {
            Some(d) if d < 0 => {
                return Err(Error::OutOfRange {
                    what: "treatment_day",
                    value: d,
                    bound: meta.map_or(i64::MAX, |m| m.days as i64),
                })
            }
            other => other.map(|d| d as usize),
        };
        patients.push(PatientRecord {
            patient_id,
            demographics: rec.demographics,
            treatment_day,
        });
    }

    let mut events = Vec::with_capacity(event_lines.len());
    for (lineno, value) in event_lines {
        let rec: EventLine =
            serde_json::from_value(value).map_err(|e| malformed(events_path, lineno, e))?;
        let patient_id = non_negative(events_path, lineno, "patient_id", rec.patient_id)?;
        for (what, v) in [("day", rec.day), ("service_id", rec.service_id)] {
            if v < 0 {
                return Err(Error::OutOfRange {
                    what,
                    value: v,
                    bound: 0,
                });
            }
        }
        if rec.count < 1 || rec.count > i64::from(u32::MAX) {
            return Err(malformed(events_path, lineno, format!("count must be >= 1, got {}", rec.count)));
        }
        events.push(ServiceEvent {
            patient_id,
            service_id: rec.service_id as usize,
            day: rec.day as usize,
            count: rec.count as u32,
        });
    }

    let dims = meta.unwrap_or_else(|| {
        let max_day = events
            .iter()
            .map(|e| e.day)
            .chain(patients.iter().filter_map(|p| p.treatment_day))
            .max();
        Dims {
            days: max_day.map_or(0, |d| d + 1),
            services: events.iter().map(|e| e.service_id + 1).max().unwrap_or(0),
            demographics: patients.first().map_or(0, |p| p.demographics.len()),
        }
    });
    ClaimsDataset::from_parts(dims, patients, events)
}

/// Writes `events.jsonl` (with a meta header) and `patients.jsonl`.
pub fn write_dataset(dataset: &ClaimsDataset, events_path: &Path, patients_path: &Path) -> Result<()> {
    let meta = serde_json::to_string(&MetaLine {
        kind: "meta",
        dims: dataset.dims(),
    })?;

    let file = File::create(events_path).map_err(|e| Error::io(events_path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(events_path, e);
    writeln!(out, "{meta}").map_err(io)?;
    for ev in dataset.events() {
        writeln!(out, "{}", serde_json::to_string(&ev)?).map_err(io)?;
    }
    out.flush().map_err(io)?;

    let file = File::create(patients_path).map_err(|e| Error::io(patients_path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(patients_path, e);
    for p in dataset.patients() {
        let line = serde_json::to_string(&PatientOut {
            patient_id: p.patient_id,
            demographics: &p.demographics,
            treatment_day: p.treatment_day,
        })?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}
