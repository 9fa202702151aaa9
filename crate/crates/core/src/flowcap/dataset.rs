//! Dataset files.
//!
//! A dataset is a line-delimited JSON file, one flow per line:
//!
//! ```text
//! {"key":"10.0.0.1-10.0.0.2/http","label":3,"n":2,"d":448,"packets":"<base64>","timestamps":[0.0,0.0125]}
//! ```
//!
//! `packets` is the base64 (standard alphabet, padded) encoding of the `n × d`
//! matrix as row-major little-endian `f32`. `key` and `label` may be `null`.
//! Padding rows are never stored.
//!
//! Next to it, `<dataset>.manifest.json` records the class names, the
//! preparation settings and per-class counts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{FlowKey, FlowRecord, FlowcapError, PrepConfig, SkipCounts};

pub const DATASET_FORMAT: &str = "eids-dataset/1";

#[derive(Serialize, Deserialize)]
struct RecordLine {
    key: Option<FlowKey>,
    label: Option<usize>,
    n: usize,
    d: usize,
    packets: String,
    timestamps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub classes: Vec<String>,
    pub prep: PrepConfig,
    pub records: usize,
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub unlabelled: usize,
    #[serde(default)]
    pub skipped: SkipCounts,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub prep: PrepConfig,
    pub records: Vec<FlowRecord>,
    pub skipped: SkipCounts,
}

impl Dataset {
    pub fn manifest_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    /// Records per class, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for r in &self.records {
            if let Some(c) = r.label.filter(|&c| c < counts.len()) {
                counts[c] += 1;
            }
        }
        counts
    }

    pub fn manifest(&self) -> DatasetManifest {
        let counts = self
            .classes
            .iter()
            .cloned()
            .zip(self.class_counts())
            .collect();
        DatasetManifest {
            format: DATASET_FORMAT.to_string(),
            classes: self.classes.clone(),
            prep: self.prep.clone(),
            records: self.records.len(),
            counts,
            unlabelled: self.records.iter().filter(|r| r.label.is_none()).count(),
            skipped: self.skipped,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), FlowcapError> {
        let mut out = BufWriter::new(File::create(path)?);
        for rec in &self.records {
            let rec = rec.unpadded();
            let bytes: Vec<u8> = rec.packets.iter().flat_map(|v| v.to_le_bytes()).collect();
            let line = RecordLine {
                key: rec.key,
                label: rec.label,
                n: rec.rows(),
                d: rec.d,
                packets: STANDARD.encode(bytes),
                timestamps: rec.timestamps,
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| FlowcapError::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        let manifest = serde_json::to_string_pretty(&self.manifest())
            .map_err(|e| FlowcapError::Format(e.to_string()))?;
        std::fs::write(Self::manifest_path(path), manifest)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FlowcapError> {
        let manifest_text = std::fs::read_to_string(Self::manifest_path(path))?;
        let manifest: DatasetManifest = serde_json::from_str(&manifest_text)
            .map_err(|e| FlowcapError::Format(format!("manifest: {e}")))?;
        if manifest.format != DATASET_FORMAT {
            return Err(FlowcapError::Format(format!(
                "unsupported dataset format `{}`",
                manifest.format
            )));
        }
        let mut records = Vec::with_capacity(manifest.records);
        for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| FlowcapError::Format(format!("line {}: {msg}", lineno + 1));
            let rl: RecordLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let bytes = STANDARD
                .decode(&rl.packets)
                .map_err(|e| bad(e.to_string()))?;
            if bytes.len() != rl.n * rl.d * 4 || rl.timestamps.len() != rl.n {
                return Err(bad(format!("shape mismatch for n={} d={}", rl.n, rl.d)));
            }
            if rl.label.is_some_and(|c| c >= manifest.classes.len()) {
                return Err(bad("label outside class list".into()));
            }
            let packets = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(FlowRecord::new(
                rl.key,
                rl.label,
                rl.d,
                packets,
                rl.timestamps,
            ));
        }
        if records.len() != manifest.records {
            return Err(FlowcapError::Format(format!(
                "manifest lists {} records, file has {}",
                manifest.records,
                records.len()
            )));
        }
        Ok(Self {
            classes: manifest.classes,
            prep: manifest.prep,
            records,
            skipped: manifest.skipped,
        })
    }
}
