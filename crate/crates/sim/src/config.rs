//! Experiment config files.
//!
//! ```json
//! {
//!   "microbenchmark": { "knob1": 0.1, "knob2": 0.1, "seed": 7 },
//!   "scenario": { "system": "cookie_monster", "epsilon_global": "1" },
//!   "bias": { "enabled": true },
//!   "output": { "cutoff": 0.05 }
//! }
//! ```
//!
//! `dataset.path` replaces the generated log by a CSV file; the
//! microbenchmark section still supplies `B`, `Δ`, the epoch length and the
//! attribution window.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cookie_monster_core::Fixed;

use crate::audit::FilterMode;
use crate::scenario::{BiasSettings, ScenarioConfig};
use crate::workload::MicrobenchmarkConfig;

pub const OUTPUT_DIR_ENV: &str = "COOKIE_MONSTER_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {path} is not valid: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    /// Synthetic relevant impressions added before every conversion.
    pub extra_impressions_per_conversion: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Falls back to `$COOKIE_MONSTER_OUTPUT_DIR`, then `out`.
    pub dir: Option<PathBuf>,
    /// Estimated-RMSRE threshold for accepting a query.
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub epsilon_global: Fixed,
    pub epsilon_per_query: Fixed,
    pub queries: usize,
    pub trials: u64,
    pub filters: FilterMode,
}

impl Default for AuditConfig {
    fn default() -> Self {
        let half = Fixed::from_raw(Fixed::SCALE / 2);
        AuditConfig { epsilon_global: half, epsilon_per_query: half, queries: 3, trials: 100_000, filters: FilterMode::Enforced }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub microbenchmark: MicrobenchmarkConfig,
    pub dataset: DatasetConfig,
    pub scenario: ScenarioConfig,
    /// Overrides `scenario.bias` when present.
    pub bias: Option<BiasSettings>,
    pub output: OutputConfig,
    pub audit: AuditConfig,
    /// Worker threads; defaults to the available parallelism.
    pub parallelism: Option<usize>,
}

impl FileConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: FileConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.microbenchmark.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scenario_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.output.cutoff.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(ConfigError::Invalid("output.cutoff must be positive".into()));
        }
        if self.parallelism == Some(0) {
            return Err(ConfigError::Invalid("parallelism must be positive".into()));
        }
        Ok(())
    }

    /// Replaces every seed by `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.microbenchmark.seed = seed;
        self.scenario.seed = seed;
        self
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        if let Some(b) = &self.bias {
            s.bias = b.clone();
        }
        s
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Canonical JSON, the input of the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
