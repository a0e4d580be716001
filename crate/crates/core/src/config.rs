//! Versioned TOML run configuration with one section per stage.
//!
//! ```toml
//! version = 1
//!
//! [synth]      # SynthConfig
//! [features]   # FeatureConfig
//! [model]      # ModelConfig
//! [eval]       # k_values, k_fractions, svg
//! [paths]      # data_dir, out_dir
//! ```
//!
//! Every key is optional; missing keys take the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureConfig;
use crate::model::ModelConfig;
use crate::synthgen::SynthConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Absolute K values.
    pub k_values: Vec<usize>,
    /// K values as fractions of the scoring cohort, rounded to the nearest
    /// integer (at least 1).
    pub k_fractions: Vec<f64>,
    pub svg: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            k_values: Vec::new(),
            k_fractions: vec![0.01, 0.02, 0.03, 0.05, 0.07, 0.10],
            svg: true,
        }
    }
}

/// K for a fraction of the cohort.
pub fn k_for_fraction(fraction: f64, cohort: usize) -> usize {
    ((fraction * cohort as f64).round() as usize).max(1)
}

impl EvalSettings {
    /// Concrete, ascending K grid for a cohort of `cohort` patients.
    pub fn resolve(&self, cohort: usize) -> Result<Vec<usize>> {
        let mut ks = self.k_values.clone();
        ks.extend(self.k_fractions.iter().map(|&f| k_for_fraction(f, cohort)));
        ks.sort_unstable();
        ks.dedup();
        if ks.is_empty() {
            return Err(Error::Config("no K values configured".into()));
        }
        if let Some(&k) = ks.iter().find(|&&k| k > cohort) {
            return Err(Error::Eval(format!("K = {k} exceeds the cohort of {cohort}")));
        }
        Ok(ks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub eval: EvalSettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            synth: SynthConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            eval: EvalSettings::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.data_dir = base.join(&cfg.paths.data_dir);
            cfg.paths.out_dir = base.join(&cfg.paths.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.synth.validate()?;
        self.model.validate()?;
        if self.synth.split_day != self.features.split_day || self.synth.horizon != self.features.horizon {
            return Err(Error::Config(format!(
                "synth (split_day {}, horizon {}) and features (split_day {}, horizon {}) disagree",
                self.synth.split_day, self.synth.horizon, self.features.split_day, self.features.horizon
            )));
        }
        if self.eval.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("eval.k_values must be strictly ascending".into()));
        }
        if self.eval.k_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("eval.k_fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Replaces the generation, sampling and training seeds with three
    /// distinct seeds derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.features.sampling_seed = seed.wrapping_add(1);
        self.model.seed = seed.wrapping_add(2);
        self
    }

    pub fn events_path(&self) -> PathBuf {
        self.paths.data_dir.join("events.jsonl")
    }

    pub fn patients_path(&self) -> PathBuf {
        self.paths.data_dir.join("patients.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("version = 1\n[synth]\npatients = 100\n[model]\narchitecture = \"logistic\"\n").unwrap();
        assert_eq!(cfg.synth.patients, 100);
        assert_eq!(cfg.features, FeatureConfig::default());
    }

    #[test]
    fn rejects_inconsistent_or_unknown() {
        assert!(RunConfig::from_toml("version = 2").is_err());
        assert!(RunConfig::from_toml("[synth]\nbogus = 1").is_err());
        assert!(RunConfig::from_toml("[features]\nhorizon = 300").is_err());
        assert!(RunConfig::from_toml("[eval]\nk_values = [5, 3]").is_err());
    }

    #[test]
    fn k_grid_resolution() {
        let eval = EvalSettings {
            k_values: vec![10, 50],
            k_fractions: vec![0.05, 0.1],
            svg: false,
        };
        assert_eq!(eval.resolve(1000).unwrap(), vec![10, 50, 100]);
        assert!(eval.resolve(40).is_err());
        assert_eq!(k_for_fraction(0.05, 17_011), 851);
        assert_eq!(k_for_fraction(0.01, 3), 1);
    }

    #[test]
    fn seeds_are_distinct() {
        let cfg = RunConfig::default().with_seed(40);
        assert_eq!((cfg.synth.seed, cfg.features.sampling_seed, cfg.model.seed), (40, 41, 42));
    }
}
