//! Labels and ensemble manifests (JSON).
//!
//! A labels manifest assigns class names to whole capture files (matched by
//! file name) and optionally to individual flows (matched by flow key, which
//! takes precedence):
//!
//! ```json
//! {
//!   "classes": ["benign", "scan"],
//!   "files": {"benign.pcap": "benign", "scan.pcap": "scan"},
//!   "flows": {"10.0.0.7-192.168.0.1/http": "scan"}
//! }
//! ```
//!
//! An ensemble manifest lists the weight archives of the retained models,
//! with paths relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use eids::evalkit::{Aggregation, Ensemble, Member};
use eids::tinyformer::{read_weights, save_weights, ModelConfig, ModelWeights};
use eids::{FlowKey, PrepConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

pub const ENSEMBLE_FORMAT: &str = "eids-ensemble/1";

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serialises");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelsManifest {
    pub classes: Vec<String>,
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub flows: BTreeMap<String, String>,
}

impl LabelsManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(CliError::Input("labels manifest lists no classes".into()));
        }
        for (what, name) in self.files.iter().chain(&self.flows) {
            self.class_index(name).ok_or_else(|| {
                CliError::Input(format!("`{what}` is labelled with unknown class `{name}`"))
            })?;
        }
        for key in self.flows.keys() {
            key.parse::<FlowKey>()?;
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Class of every file-level entry, by file name.
    pub fn file_label(&self, path: &Path) -> Option<usize> {
        let name = path.file_name()?.to_str()?;
        self.files.get(name).and_then(|c| self.class_index(c))
    }

    /// Flow-level labels keyed by parsed flow key.
    pub fn flow_labels(&self) -> Result<HashMap<FlowKey, usize>> {
        self.flows
            .iter()
            .map(|(k, c)| {
                let idx = self
                    .class_index(c)
                    .ok_or_else(|| CliError::Input(format!("unknown class `{c}`")))?;
                Ok((k.parse()?, idx))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    /// Archive path relative to the manifest directory.
    pub archive: String,
    pub split_id: usize,
    /// Accuracy on the member's own held-out split.
    pub accuracy: f64,
    pub mean_earliness: Option<f64>,
    pub max_earliness: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format: String,
    pub classes: Vec<String>,
    pub aggregation: Aggregation,
    /// Preparation settings the members were trained under; streaming
    /// replays captures with exactly these.
    pub prep: PrepConfig,
    pub members: Vec<MemberEntry>,
}

impl EnsembleManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if m.format != ENSEMBLE_FORMAT {
            return Err(CliError::Input(format!(
                "{}: unsupported ensemble format `{}`",
                path.display(),
                m.format
            )));
        }
        if m.members.is_empty() {
            return Err(CliError::Input(format!(
                "{}: ensemble has no members",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn archive_path(manifest: &Path, entry: &MemberEntry) -> PathBuf {
        manifest
            .parent()
            .unwrap_or(Path::new("."))
            .join(&entry.archive)
    }
}

/// Writes one member archive next to the manifest and returns its entry.
pub fn save_member(
    dir: &Path,
    weights: &ModelWeights<f32>,
    cfg: &ModelConfig,
    mut entry: MemberEntry,
) -> Result<MemberEntry> {
    let name = format!("member-{:03}.eidsw", entry.split_id);
    save_weights(weights, cfg, &dir.join(&name))?;
    entry.archive = name;
    Ok(entry)
}

/// Loads the manifest and every member archive.
pub fn load_ensemble(path: &Path) -> Result<(EnsembleManifest, Ensemble)> {
    let manifest = EnsembleManifest::load(path)?;
    let mut members = Vec::with_capacity(manifest.members.len());
    for entry in &manifest.members {
        let p = EnsembleManifest::archive_path(path, entry);
        let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
        let (weights, config) =
            read_weights(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        if config.classes != manifest.classes.len() {
            return Err(CliError::Input(format!(
                "{}: {} classes, manifest lists {}",
                p.display(),
                config.classes,
                manifest.classes.len()
            )));
        }
        members.push(Member { weights, config });
    }
    let ensemble = Ensemble::new(members, manifest.aggregation)?;
    Ok((manifest, ensemble))
}
