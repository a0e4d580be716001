//! Seeded synthetic claims panels with a planted recency signal.
//!
//! Each patient has a gamma-distributed activity level that scales the
//! daily Bernoulli rate of every service. Trigger services additionally
//! flare: flare onsets arrive at `flare_rate` per day and multiply trigger
//! rates by `flare_multiplier` for `flare_length` days. The treatment day is
//! the first success of a discrete-time hazard
//!
//! `h_t = min(1, hazard_base * hazard_boost^c_t)`
//!
//! where `c_t` counts trigger events on days `[t - R, t)`. Treatment is
//! drawn by inversion: each patient gets one `Exp(1)` threshold and is
//! treated on the first day where `sum_s -ln(1 - h_s)` reaches it, which
//! has the same law as independent daily Bernoulli(h_t) draws. Keeping the
//! threshold fixed makes every patient's treatment day monotone in
//! `hazard_base`, so the look-forward event rate can be calibrated by
//! bisection without re-simulating histories.
//!
//! Randomness: ChaCha8 streams. A global stream (from `seed`) fixes service
//! weights and dummy prevalences; each patient draws from its own stream
//! seeded by `(seed, patient_id)`, so output does not depend on the number
//! of rayon workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Geometric, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::{ClaimsDataset, Dims, PatientId, PatientRecord, ServiceEvent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// P
    pub patients: usize,
    /// T
    pub days: usize,
    /// I
    pub services: usize,
    /// D
    pub demographics: usize,
    /// Number of the D demographic columns that are 0/1 dummies.
    pub dummy_demographics: usize,
    /// Expected service events per patient per day at activity 1.
    pub base_event_rate: f64,
    /// Gamma shape of per-patient activity (mean 1). Larger is more homogeneous.
    pub activity_shape: f64,
    pub trigger_services: Vec<usize>,
    /// R: trigger events on days `[t - R, t)` drive the hazard on day t.
    pub recency_window: usize,
    /// Daily probability that a trigger flare starts.
    pub flare_rate: f64,
    pub flare_length: usize,
    pub flare_multiplier: f64,
    /// Daily baseline treatment probability. Overwritten by calibration.
    pub hazard_base: f64,
    pub hazard_boost: f64,
    /// Fraction of the untreated-at-split cohort treated within the horizon.
    pub target_event_rate: f64,
    pub calibrate: bool,
    pub split_day: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            patients: 20_000,
            days: 1_411,
            services: 26,
            demographics: 28,
            dummy_demographics: 18,
            base_event_rate: 0.05,
            activity_shape: 2.0,
            trigger_services: vec![1, 2, 3],
            recency_window: 60,
            flare_rate: 0.002,
            flare_length: 90,
            flare_multiplier: 8.0,
            hazard_base: 1e-4,
            hazard_boost: 1.5,
            target_event_rate: 0.0561,
            calibrate: true,
            split_day: 1_046,
            horizon: 365,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("base_event_rate", self.base_event_rate),
            ("flare_rate", self.flare_rate),
            ("hazard_base", self.hazard_base),
            ("target_event_rate", self.target_event_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        if self.recency_window < 1 {
            return bad("recency_window must be >= 1".into());
        }
        if let Some(&s) = self.trigger_services.iter().find(|&&s| s >= self.services) {
            return bad(format!("trigger service {s} outside [0, {})", self.services));
        }
        if self.dummy_demographics > self.demographics {
            return bad("dummy_demographics exceeds demographics".into());
        }
        if !(self.hazard_boost >= 1.0 && self.hazard_boost.is_finite()) {
            return bad(format!("hazard_boost = {} must be >= 1", self.hazard_boost));
        }
        if !(self.flare_multiplier >= 1.0 && self.flare_multiplier.is_finite()) {
            return bad("flare_multiplier must be >= 1".into());
        }
        if self.activity_shape.is_nan() || self.activity_shape <= 0.0 {
            return bad("activity_shape must be positive".into());
        }
        if self.days == 0 || self.services == 0 {
            return bad("days and services must be positive".into());
        }
        if self.split_day + self.horizon > self.days {
            return bad(format!(
                "split_day + horizon = {} exceeds days = {}",
                self.split_day + self.horizon,
                self.days
            ));
        }
        Ok(())
    }
}

/// What calibration settled on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub hazard_base: f64,
    pub realized_rate: f64,
    pub cohort_size: usize,
    pub future_positives: usize,
    pub treated_before_split: usize,
}

/// Generates a dataset; see [`generate_with_report`].
pub fn generate(config: &SynthConfig) -> Result<ClaimsDataset> {
    generate_with_report(config).map(|(ds, _)| ds)
}

pub fn generate_with_report(config: &SynthConfig) -> Result<(ClaimsDataset, SynthReport)> {
    config.validate()?;

    let mut global = ChaCha8Rng::seed_from_u64(config.seed);
    let raw: Vec<f64> = (0..config.services)
        .map(|_| global.random_range(0.5..1.5))
        .collect();
    let total: f64 = raw.iter().sum();
    let service_rates: Vec<f64> = raw
        .iter()
        .map(|w| config.base_event_rate * w / total)
        .collect();
    let dummy_prevalence: Vec<f64> = (0..config.dummy_demographics)
        .map(|_| global.random_range(0.1..0.6))
        .collect();
    let mut is_trigger = vec![false; config.services];
    for &s in &config.trigger_services {
        is_trigger[s] = true;
    }
    let shared = Shared {
        config,
        service_rates,
        dummy_prevalence,
        is_trigger,
    };

    let sims: Vec<SimPatient> = (0..config.patients as PatientId)
        .into_par_iter()
        .map(|pid| shared.simulate(pid))
        .collect();

    let hazard_base = if config.calibrate {
        calibrate(&sims, config)?
    } else {
        config.hazard_base
    };
    let report = summarize(&sims, config, hazard_base);

    let mut patients = Vec::with_capacity(sims.len());
    let mut events = Vec::new();
    for sim in sims {
        patients.push(PatientRecord {
            patient_id: sim.patient_id,
            demographics: sim.demographics,
            treatment_day: treatment_day(&sim.exposure, sim.threshold, hazard_base, config.hazard_boost),
        });
        events.extend(sim.events);
    }
    let dims = Dims {
        days: config.days,
        services: config.services,
        demographics: config.demographics,
    };
    let dataset = ClaimsDataset::from_parts(dims, patients, events)?;
    Ok((dataset, report))
}

struct Shared<'a> {
    config: &'a SynthConfig,
    service_rates: Vec<f64>,
    dummy_prevalence: Vec<f64>,
    is_trigger: Vec<bool>,
}

/// Maximal run of days with a constant recent-trigger count.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Run {
    start: usize,
    len: usize,
    triggers: u32,
}

struct SimPatient {
    patient_id: PatientId,
    demographics: Vec<f64>,
    events: Vec<ServiceEvent>,
    exposure: Vec<Run>,
    threshold: f64,
}

/// Derives an independent stream seed for one patient.
fn patient_seed(seed: u64, patient_id: PatientId) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(patient_id))
}

/// Days in `[from, to)` hit by a daily Bernoulli(rate) process.
fn bernoulli_days(rng: &mut ChaCha8Rng, rate: f64, from: usize, to: usize, out: &mut Vec<usize>) {
    if rate <= 0.0 || from >= to {
        return;
    }
    if rate >= 1.0 {
        out.extend(from..to);
        return;
    }
    let gap = Geometric::new(rate).expect("rate in (0, 1)");
    let mut day = from as u64;
    loop {
        day += gap.sample(rng);
        if day >= to as u64 {
            return;
        }
        out.push(day as usize);
        day += 1;
    }
}

impl Shared<'_> {
    fn simulate(&self, patient_id: PatientId) -> SimPatient {
        let cfg = self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(patient_seed(cfg.seed, patient_id));

        let activity: f64 = Gamma::new(cfg.activity_shape, 1.0 / cfg.activity_shape)
            .expect("positive shape")
            .sample(&mut rng);

        let continuous = cfg.demographics - cfg.dummy_demographics;
        let mut demographics = Vec::with_capacity(cfg.demographics);
        for _ in 0..continuous {
            demographics.push(rng.sample::<f64, _>(StandardNormal));
        }
        for &p in &self.dummy_prevalence {
            demographics.push(if rng.random_bool(p) { 1.0 } else { 0.0 });
        }

        let mut onsets = Vec::new();
        bernoulli_days(&mut rng, cfg.flare_rate, 0, cfg.days, &mut onsets);
        let flares: Vec<(usize, usize)> = onsets
            .iter()
            .map(|&s| (s, (s + cfg.flare_length).min(cfg.days)))
            .collect();

        let mut trigger_daily = vec![0u32; cfg.days];
        let mut events = Vec::new();
        let mut days = Vec::new();
        for (service, &rate) in self.service_rates.iter().enumerate() {
            let rate = (rate * activity).min(1.0);
            days.clear();
            bernoulli_days(&mut rng, rate, 0, cfg.days, &mut days);
            if self.is_trigger[service] {
                let extra = (rate * (cfg.flare_multiplier - 1.0)).min(1.0);
                for &(from, to) in &flares {
                    bernoulli_days(&mut rng, extra, from, to, &mut days);
                }
            }
            for &day in &days {
                if self.is_trigger[service] {
                    trigger_daily[day] += 1;
                }
                events.push(ServiceEvent {
                    patient_id,
                    service_id: service,
                    day,
                    count: 1,
                });
            }
        }

        let threshold: f64 = rng.sample(Exp1);
        SimPatient {
            patient_id,
            demographics,
            events,
            exposure: recent_trigger_runs(&trigger_daily, cfg.recency_window),
            threshold,
        }
    }
}

/// Run-length encodes `c_t = sum(daily[t - window .. t])` over all days.
fn recent_trigger_runs(daily: &[u32], window: usize) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    let mut current = 0u32;
    for t in 0..daily.len() {
        if t >= 1 {
            current += daily[t - 1];
        }
        if t > window {
            current -= daily[t - 1 - window];
        }
        match runs.last_mut() {
            Some(run) if run.triggers == current => run.len += 1,
            _ => runs.push(Run {
                start: t,
                len: 1,
                triggers: current,
            }),
        }
    }
    runs
}

/// Cumulative-hazard increment `-ln(1 - h)` for one day.
fn daily_intensity(hazard_base: f64, hazard_boost: f64, triggers: u32) -> f64 {
    let h = hazard_base * hazard_boost.powi(triggers as i32);
    if h >= 1.0 {
        f64::INFINITY
    } else {
        -(-h).ln_1p()
    }
}

fn treatment_day(runs: &[Run], threshold: f64, hazard_base: f64, hazard_boost: f64) -> Option<usize> {
    let mut cumulative = 0.0;
    for run in runs {
        let rate = daily_intensity(hazard_base, hazard_boost, run.triggers);
        if rate == f64::INFINITY {
            return Some(run.start);
        }
        let need = threshold - cumulative;
        if rate * run.len as f64 >= need {
            let k = ((need / rate).ceil() as usize).clamp(1, run.len);
            return Some(run.start + k - 1);
        }
        cumulative += rate * run.len as f64;
    }
    None
}

fn summarize(sims: &[SimPatient], cfg: &SynthConfig, hazard_base: f64) -> SynthReport {
    let (mut before, mut cohort, mut future) = (0usize, 0usize, 0usize);
    for sim in sims {
        match treatment_day(&sim.exposure, sim.threshold, hazard_base, cfg.hazard_boost) {
            Some(d) if d <= cfg.split_day => before += 1,
            Some(d) if d <= cfg.split_day + cfg.horizon => {
                cohort += 1;
                future += 1;
            }
            _ => cohort += 1,
        }
    }
    SynthReport {
        hazard_base,
        realized_rate: if cohort == 0 { 0.0 } else { future as f64 / cohort as f64 },
        cohort_size: cohort,
        future_positives: future,
        treated_before_split: before,
    }
}

const CALIBRATION_TOLERANCE: f64 = 0.01;

/// Finds `hazard_base` whose look-forward event rate matches the target:
/// a coarse log-grid scan brackets the first crossing, bisection refines it.
fn calibrate(sims: &[SimPatient], cfg: &SynthConfig) -> Result<f64> {
    let target = cfg.target_event_rate;
    let rate_at = |log_b: f64| summarize(sims, cfg, log_b.exp()).realized_rate;

    let (lo_end, hi_end) = (1e-10f64.ln(), 0.0f64);
    let steps = 60;
    let mut lo = lo_end;
    let mut hi = None;
    for k in 1..=steps {
        let x = lo_end + (hi_end - lo_end) * k as f64 / steps as f64;
        if rate_at(x) >= target {
            hi = Some(x);
            break;
        }
        lo = x;
    }
    let Some(mut hi) = hi else {
        return Err(Error::Calibration(format!(
            "look-forward rate never reaches {target} for hazard_base in [1e-10, 1]"
        )));
    };
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Pick whichever bracket end lands closer; treatment days are discrete.
    let best = if (rate_at(lo) - target).abs() < (rate_at(hi) - target).abs() {
        lo
    } else {
        hi
    };
    let realized = rate_at(best);
    if (realized - target).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!(
            "closest realized rate {realized:.4} misses target {target} by more than {CALIBRATION_TOLERANCE}"
        )));
    }
    log::info!(
        "calibrated hazard_base = {:.6e} (realized look-forward rate {:.4})",
        best.exp(),
        realized
    );
    Ok(best.exp())
}
