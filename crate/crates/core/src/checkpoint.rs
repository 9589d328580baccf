//! Checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"RSAT" | u32 version | u64 meta_len | meta JSON (config + vocab)
//! u32 tensor_count | per tensor: u32 name_len | name | u32 ndim | u64 dims.. | f64 data..
//! ```
//!
//! A JSON sidecar next to the container records the epoch, dev report,
//! training seconds and a hash of the model configuration.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"RSAT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    vocab: Vocab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub epoch: usize,
    pub dev_report: EvalReport,
    pub seconds: f64,
    pub config_hash: String,
}

/// Hex SHA-256 of the canonical JSON of `config`.
pub fn config_hash(config: &ModelConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Meta {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
    })?;
    let mut out = Vec::with_capacity(16 + meta.len() + 8 * model.params.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflow".into()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let meta_len = c.len()?;
    let meta: Meta = serde_json::from_slice(c.take(meta_len)?)?;
    let count = c.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.len()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    meta.config.validate()?;
    Ok(Model {
        config: meta.config,
        vocab: meta.vocab,
        params,
    })
}

/// Writes the container and its sidecar.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    epoch: usize,
    dev_report: &EvalReport,
    seconds: f64,
) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_model(model)?)?;
    let sidecar = CheckpointSidecar {
        epoch,
        dev_report: *dev_report,
        seconds,
        config_hash: config_hash(&model.config)?,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_model(&bytes)
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<CheckpointSidecar> {
    let text = fs::read_to_string(sidecar_path(path.as_ref()))?;
    Ok(serde_json::from_str(&text)?)
}
