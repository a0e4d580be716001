//! Time-sensitive treatment-event prediction from longitudinal claims.
//!
//! Service histories are aggregated into δ-day buckets before a per-patient
//! index date, combined with demographics, and used to train a classifier
//! that ranks the cohort still untreated at a split date. Rankings are scored
//! online: how many of the top K patients are treated within the
//! look-forward horizon. Count-only and count + time-difference feature
//! modes serve as baselines.
//!
//! Modules follow the pipeline:
//!
//! - [`claims`]: dataset model, JSONL ingestion, raw count queries
//! - [`synthgen`]: seeded synthetic panels with a planted recency signal
//! - [`featurize`]: the three feature modes and index-date labeling
//! - [`model`]: MLP and logistic classifiers with gradient checking
//! - [`eval`]: top-K accuracy, lifts, report and curve files
//! - [`pipeline`]: per-mode and three-mode benchmark runs
//! - [`config`]: the TOML run configuration

pub mod claims;
pub mod config;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod fmt;
pub mod model;
pub mod pipeline;
pub mod synthgen;

pub use claims::{load_dataset, service_counts, write_dataset, ClaimsDataset, Dims, PatientId, PatientRecord, ServiceEvent};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{improvement, k_accuracy, EvalReport};
pub use featurize::{
    bucket_features, build_scoring_matrix, build_training_matrix, time_difference_features, FeatureConfig,
    FeatureMode, LabeledMatrix,
};
pub use model::{gradient_check, predict, train, Architecture, ModelConfig, TrainedModel};
pub use synthgen::{generate, generate_with_report, SynthConfig, SynthReport};
