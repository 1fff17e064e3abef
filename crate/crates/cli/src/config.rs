//! Run configuration: defaults, an optional JSON file, then command-line
//! flags, in increasing precedence.

use std::path::{Path, PathBuf};

use kgarm_core::autonet::TrainingConfig;
use kgarm_core::synth::SyntheticSpec;
use serde::{Deserialize, Serialize};

use crate::error::{read_input, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Sensor readings (`timestamp,sensor,value` CSV).
    pub csv: Option<PathBuf>,
    /// Property graph document with bindings.
    pub graph: Option<PathBuf>,
    /// Directory holding `model.json` and `manifest.json`.
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Drives training, sensor sampling and synthetic generation.
    pub seed: u64,
    /// Aggregation window; raw timestamps are used when unset.
    pub window_seconds: Option<i64>,
    pub intervals: usize,
    pub enrich: bool,
    pub depth: usize,
    pub edge_properties: bool,
    pub sample_sensors: Option<usize>,
    pub training: TrainingConfig,
    pub similarity_threshold: f64,
    pub max_antecedents: usize,
    /// Only these features are marked during extraction.
    pub markable_features: Option<Vec<String>>,
    pub parallel: bool,
    pub min_support: Option<f64>,
    pub coupled: bool,
    /// Rules file whose mean support sets the coupled threshold.
    pub aerial_rules: Option<PathBuf>,
    pub min_confidence: f64,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            csv: None,
            graph: None,
            model: None,
            out: None,
            seed: 0,
            window_seconds: None,
            intervals: 10,
            enrich: false,
            depth: 1,
            edge_properties: false,
            sample_sensors: None,
            training: TrainingConfig::default(),
            similarity_threshold: 0.8,
            max_antecedents: 2,
            markable_features: None,
            parallel: false,
            min_support: None,
            coupled: false,
            aerial_rules: None,
            min_confidence: 0.8,
            synth: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => serde_json::from_str(&read_input(p)?)
                .map_err(|e| CliError::Usage(format!("config `{}`: {e}", p.display()))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.intervals == 0 {
            return bad("intervals must be >= 1".into());
        }
        if let Some(w) = self.window_seconds {
            if w <= 0 {
                return bad(format!("window-seconds must be positive, got {w}"));
            }
        }
        if self.sample_sensors == Some(0) {
            return bad("sample-sensors must be >= 1".into());
        }
        let t = self.similarity_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return bad(format!("similarity-threshold must be in (0, 1], got {t}"));
        }
        if self.max_antecedents == 0 {
            return bad("max-antecedents must be >= 1".into());
        }
        if let Some(s) = self.min_support {
            if !(s > 0.0 && s <= 1.0) {
                return bad(format!("min-support must be in (0, 1], got {s}"));
            }
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return bad(format!("min-confidence must be in [0, 1], got {}", self.min_confidence));
        }
        self.training
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Training settings with the run seed applied.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
    }
}
