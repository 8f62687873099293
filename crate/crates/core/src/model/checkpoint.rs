//! Checkpoint file: `CSCKPT01`, `u32` header length, JSON header, then one
//! block per parameter tensor (`u16` name length, name, `u32` count, `f32`
//! values), all little-endian.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::FusionConfig;
use super::fusion::{FusionModel, ParamEntry};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CSCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where the model's input embeddings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Built-in patch encoders computed from mel spectrograms and frames.
    #[default]
    Builtin,
    /// Precomputed embeddings read from an embedding store.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub epoch: Option<usize>,
    pub val_macro_f1: Option<f64>,
    pub seed: Option<u64>,
    pub encoder: EncoderKind,
    pub feature_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: FusionConfig,
    params: Vec<ParamEntry>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: FusionModel, meta: CheckpointMeta) -> Self {
        Checkpoint { model, meta }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            config: self.model.config().clone(),
            params: self.model.layout().to_vec(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + self.model.n_params() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let params = self.model.params_f32();
        for e in self.model.layout() {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.len() as u32).to_le_bytes());
            for v in &params[e.range()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::format("checkpoint", r.to_string());
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = read_u32(&mut bytes)? as usize;
        if bytes.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[..hlen])?;
        bytes = &bytes[hlen..];
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let reference = FusionModel::new(header.config.clone(), 0)?;
        if reference.layout() != header.params.as_slice() {
            return Err(Error::CheckpointMismatch(
                "parameter layout does not match config".into(),
            ));
        }
        let mut params = Vec::with_capacity(reference.n_params());
        for e in &header.params {
            let mut nl = [0u8; 2];
            bytes
                .read_exact(&mut nl)
                .map_err(|_| bad("truncated block"))?;
            let nl = u16::from_le_bytes(nl) as usize;
            if bytes.len() < nl {
                return Err(bad("truncated block name"));
            }
            let name = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("non-utf8 block name"))?;
            if name != e.name {
                return Err(Error::CheckpointMismatch(format!(
                    "expected block `{}`, found `{name}`",
                    e.name
                )));
            }
            bytes = &bytes[nl..];
            let count = read_u32(&mut bytes)? as usize;
            if count != e.len() || bytes.len() < count * 4 {
                return Err(Error::CheckpointMismatch(format!(
                    "block `{name}` has wrong size"
                )));
            }
            params.extend(
                bytes[..count * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
            bytes = &bytes[count * 4..];
        }
        if !bytes.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            model: FusionModel::from_params(header.config, params)?,
            meta: header.meta,
        })
    }

    /// Write atomically via a sibling temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        crate::util::atomic_write(path, &bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
        Self::from_bytes(&bytes).map_err(|e| e.at(path))
    }

    /// Load and require a specific configuration.
    pub fn load_expecting(path: impl AsRef<Path>, config: &FusionConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.model.config() != config {
            return Err(Error::CheckpointMismatch(
                "checkpoint config differs from requested config".into(),
            ));
        }
        Ok(ck)
    }
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    bytes
        .read_exact(&mut b)
        .map_err(|_| Error::format("checkpoint", "truncated"))?;
    Ok(u32::from_le_bytes(b))
}
