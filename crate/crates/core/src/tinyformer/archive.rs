//! Weight archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "EIDSWGT\0"
//! version      u32       ARCHIVE_VERSION
//! config_len   u32
//! config       config_len bytes of JSON (ModelConfig)
//! tensor_count u32
//! tensor_count × {
//!     name_len u16, name (UTF-8),
//!     ndim u8, ndim × u32 dims,
//!     product(dims) × f32 row-major payload
//! }
//! sha256       32 bytes over every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ModelWeights, REFERENCE_PARAM_COUNT};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"EIDSWGT\0";
pub const ARCHIVE_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Serialises weights and their config into archive bytes.
pub fn write_weights(weights: &ModelWeights<f32>, cfg: &ModelConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    let header = serde_json::to_vec(cfg).expect("config serialises");
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let tensors = weights.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &dim in &t.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_weights(
    weights: &ModelWeights<f32>,
    cfg: &ModelConfig,
    path: &Path,
) -> Result<(), ModelError> {
    let bytes = write_weights(weights, cfg);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(ModelWeights<f32>, ModelConfig), ModelError> {
    read_weights(&fs::read(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                ModelError::Format(format!("unexpected end of archive at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Parses archive bytes. The checksum is verified before anything else is
/// interpreted, so any truncation or corruption reports `ChecksumMismatch`.
pub fn read_weights(bytes: &[u8]) -> Result<(ModelWeights<f32>, ModelConfig), ModelError> {
    if bytes.len() < ARCHIVE_MAGIC.len() + 4 + DIGEST_LEN {
        return Err(ModelError::ChecksumMismatch);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ModelError::ChecksumMismatch);
    }
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(ARCHIVE_MAGIC.len())? != ARCHIVE_MAGIC {
        return Err(ModelError::Format("not a weight archive".into()));
    }
    let version = c.u32()?;
    if version != ARCHIVE_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: ARCHIVE_VERSION,
        });
    }
    let header_len = c.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(c.take(header_len)?)
        .map_err(|e| ModelError::Format(e.to_string()))?;
    cfg.validate()?;

    let mut weights = ModelWeights::<f32>::init(&cfg, 0);
    let expected: Vec<(String, Vec<usize>)> = weights
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    let count = c.u32()? as usize;
    if count != expected.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "archive holds {count} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut payloads = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let name_len = c.u16()? as usize;
        let found = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| ModelError::Format(e.to_string()))?;
        let ndim = c.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if found != name || &dims != shape {
            return Err(ModelError::ShapeMismatch(format!(
                "tensor `{found}` {dims:?} where `{name}` {shape:?} was expected"
            )));
        }
        let len: usize = dims.iter().product();
        let raw = c.take(len * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        payloads.push(data);
    }
    if c.pos != body.len() {
        return Err(ModelError::Format(format!(
            "{} trailing bytes",
            body.len() - c.pos
        )));
    }

    let mut it = payloads.into_iter();
    for dst in weights.trainable_mut() {
        dst.copy_from_slice(&it.next().expect("count checked"));
    }
    if let Some(table) = it.next() {
        weights.sin_table = table;
    }
    if !weights.all_finite() {
        return Err(ModelError::Format(
            "archive contains non-finite values".into(),
        ));
    }
    let reference = ModelConfig {
        pe_kind: cfg.pe_kind,
        ..ModelConfig::default()
    };
    let same_shape = ModelConfig {
        dropout: reference.dropout,
        ..cfg.clone()
    } == reference;
    if same_shape && weights.count_params(false) != REFERENCE_PARAM_COUNT {
        return Err(ModelError::ShapeMismatch(format!(
            "reference configuration must have {REFERENCE_PARAM_COUNT} parameters, archive has {}",
            weights.count_params(false)
        )));
    }
    Ok((weights, cfg))
}
