//! Run configuration, read from TOML. Every field has a default, so an empty
//! file (or none at all) gives the reference architecture and training
//! setup.
//!
//! ```toml
//! [prep]
//! filter = "http"
//!
//! [model]
//! pe_kind = "dyn_sin"
//!
//! [train]
//! epochs = 30
//! splits = 29
//! retain = 5
//!
//! [eval]
//! tau = 0.99
//! o_list = [5]
//! ```

use std::path::{Path, PathBuf};

use eids::augment::AugConfig;
use eids::evalkit::{Aggregation, ErdeCosts};
use eids::tinyformer::{ModelConfig, TrainConfig};
use eids::PrepConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    #[serde(flatten)]
    pub core: TrainConfig,
    /// Leave-one-out splits to train (selected for diversity).
    pub splits: usize,
    /// Best models kept for the ensemble.
    pub retain: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            core: TrainConfig::default(),
            splits: 29,
            retain: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub tau: f64,
    pub o_list: Vec<usize>,
    pub benign_class: usize,
    /// Overrides the aggregation stored in the ensemble manifest.
    pub aggregation: Option<Aggregation>,
    pub erde: ErdeCosts,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            tau: 0.99,
            o_list: vec![5],
            benign_class: 0,
            aggregation: None,
            erde: ErdeCosts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub weights_dir: Option<PathBuf>,
    pub reports_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub prep: PrepConfig,
    pub augment: AugConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` if given, else returns the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}
