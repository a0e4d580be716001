//! End-to-end runs: featurize, train, score the untreated-at-split cohort
//! and evaluate, for one feature mode or all three.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::claims::{ClaimsDataset, PatientId};
use crate::config::{EvalSettings, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::featurize::{build_scoring_matrix, build_training_matrix, FeatureConfig, FeatureMode, LabeledMatrix};
use crate::model::{self, ModelConfig, TrainedModel};

/// A pipeline failure tagged with the stage it happened in.
#[derive(Debug, thiserror::Error)]
#[error("{stage} ({mode}): {source}")]
pub struct StageError {
    pub stage: &'static str,
    pub mode: FeatureMode,
    #[source]
    pub source: Error,
}

fn stage<T>(stage: &'static str, mode: FeatureMode, r: Result<T>) -> Result<T, StageError> {
    r.map_err(|source| StageError { stage, mode, source })
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: FeatureMode,
    pub train_rows: usize,
    pub train_positives: usize,
    pub model: TrainedModel,
    /// Scores for the cohort, in patient id order.
    pub scores: Vec<(PatientId, f64)>,
    pub report: EvalReport,
}

/// Scoring cohort truth: `(patient, treated within the horizon)`.
pub fn cohort_truth(matrix: &LabeledMatrix) -> Vec<(PatientId, bool)> {
    matrix.rows.iter().map(|r| (r.patient_id, r.label == 1)).collect()
}

/// Scores a prepared scoring matrix with a trained model.
pub fn score_cohort(model: &TrainedModel, scoring: &LabeledMatrix) -> Result<Vec<(PatientId, f64)>> {
    let probs = model::score_matrix(model, scoring)?;
    Ok(scoring.rows.iter().map(|r| r.patient_id).zip(probs).collect())
}

pub fn run_mode(
    dataset: &ClaimsDataset,
    features: &FeatureConfig,
    model_config: &ModelConfig,
    eval_settings: &EvalSettings,
) -> Result<ModeRun, StageError> {
    let mode = features.mode;
    let train = stage("featurize", mode, build_training_matrix(dataset, features))?;
    let model = stage("train", mode, model::train(&train, model_config))?;
    let scoring = stage(
        "featurize",
        mode,
        build_scoring_matrix(dataset, features, features.normalize.then_some(&model.normalization)),
    )?;
    let scores = stage("score", mode, score_cohort(&model, &scoring))?;
    let truth = cohort_truth(&scoring);
    let ks = stage("evaluate", mode, eval_settings.resolve(truth.len()))?;
    let report = stage("evaluate", mode, eval::k_accuracy(mode.as_str(), &scores, &truth, &ks))?;
    Ok(ModeRun {
        mode,
        train_rows: train.len(),
        train_positives: train.positives(),
        model,
        scores,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    /// One run per mode, in [`FeatureMode::ALL`] order.
    pub runs: Vec<ModeRun>,
}

/// Lift rows reported by the benchmark: the bucketed model against each baseline.
pub const LIFT_PAIRS: [(FeatureMode, FeatureMode); 2] = [
    (FeatureMode::Bucketed, FeatureMode::Count),
    (FeatureMode::Bucketed, FeatureMode::CountTd),
];

impl Benchmark {
    pub fn run(&self, mode: FeatureMode) -> &ModeRun {
        self.runs.iter().find(|r| r.mode == mode).expect("all modes present")
    }

    pub fn reports(&self) -> Vec<EvalReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }

    pub fn lifts(&self) -> Result<Vec<(String, Vec<Option<f64>>)>> {
        LIFT_PAIRS
            .iter()
            .map(|&(a, b)| {
                let lift = eval::improvement(&self.run(a).report, &self.run(b).report)?;
                Ok((format!("{a} vs {b}"), lift))
            })
            .collect()
    }

    pub fn summary(&self) -> Result<String> {
        Ok(eval::summary_table(&self.reports(), &self.lifts()?))
    }

    /// Writes the report bundle into `out_dir` and returns the files written.
    pub fn write(&self, out_dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let path = out_dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        for run in &self.runs {
            put(format!("report_{}.csv", run.mode), eval::report_csv(std::slice::from_ref(&run.report)))?;
            put(format!("model_{}.json", run.mode), run.model.to_json()?)?;
        }
        let reports = self.reports();
        put("report.csv".into(), eval::report_csv(&reports))?;
        let pairs: Vec<_> = LIFT_PAIRS
            .iter()
            .map(|&(a, b)| (&self.run(a).report, &self.run(b).report))
            .collect();
        put("improvement.csv".into(), eval::improvement_csv(&pairs)?)?;
        put("summary.txt".into(), self.summary()?)?;
        written.extend(eval::accuracy_curve(&reports, &out_dir.join("curve.csv"), svg)?);
        Ok(written)
    }
}

/// Runs all three feature modes on one dataset. Modes train concurrently;
/// each is deterministic on its own, so results do not depend on scheduling.
pub fn benchmark(dataset: &ClaimsDataset, config: &RunConfig) -> Result<Benchmark, StageError> {
    let runs = FeatureMode::ALL
        .par_iter()
        .map(|&mode| {
            let features = FeatureConfig {
                mode,
                ..config.features.clone()
            };
            run_mode(dataset, &features, &config.model, &config.eval)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Benchmark { runs })
}
