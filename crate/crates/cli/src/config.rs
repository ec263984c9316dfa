use std::path::{Path, PathBuf};

use qac_core::corpus::{SplitSpec, SynthConfig};
use qac_core::model::{SinConfig, Variant};
use qac_core::train::{DatasetConfig, TrainConfig};
use qac_service::ServiceConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// How `ingest` cuts the log into background/train/valid/test windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Shares of the log's time span, in window order.
    pub fractions: [f64; 4],
    pub min_query_frequency: u64,
    /// Explicit windows; overrides `fractions` when set.
    pub windows: Option<SplitSpec>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: [0.3, 0.5, 0.1, 0.1],
            min_query_frequency: 3,
            windows: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
    pub seeds: u64,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            seeds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub requests: usize,
    pub concurrency: usize,
    pub k: usize,
    pub p50_budget_ms: f64,
    pub p99_budget_ms: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            requests: 1000,
            concurrency: 1,
            k: 5,
            p50_budget_ms: 50.0,
            p99_budget_ms: 200.0,
        }
    }
}

/// Every section of the config file. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub dataset: DatasetConfig,
    pub model: SinConfig,
    pub train: TrainConfig,
    pub ablate: AblateConfig,
    pub serve: ServiceConfig,
    pub bench: BenchConfig,
    /// Category lexicon used for IE/IT slices and history filtering.
    pub lexicon: Option<PathBuf>,
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The explicit path, else `QAC_CONFIG`, else built-in defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os("QAC_CONFIG") {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }
}
