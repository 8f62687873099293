use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Embedding slot: one token per slot in the fusion encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    /// Spectrogram-transformer audio embedding.
    AudioSpectral,
    /// Language-aligned audio embedding.
    AudioSemantic,
    /// Image embedding.
    Image,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::AudioSpectral, Slot::AudioSemantic, Slot::Image];

    pub fn dim(self) -> usize {
        match self {
            Slot::AudioSpectral => 768,
            Slot::AudioSemantic => 512,
            Slot::Image => 768,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Slot::AudioSpectral => 0,
            Slot::AudioSemantic => 1,
            Slot::Image => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::AudioSpectral => "audio_spectral",
            Slot::AudioSemantic => "audio_semantic",
            Slot::Image => "image",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-modality embedding vectors for one sample. Absent slots are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbeddingBundle {
    pub audio_spectral: Option<Vec<f32>>,
    pub audio_semantic: Option<Vec<f32>>,
    pub image: Option<Vec<f32>>,
}

impl EmbeddingBundle {
    pub fn get(&self, slot: Slot) -> Option<&[f32]> {
        match slot {
            Slot::AudioSpectral => self.audio_spectral.as_deref(),
            Slot::AudioSemantic => self.audio_semantic.as_deref(),
            Slot::Image => self.image.as_deref(),
        }
    }

    pub fn set(&mut self, slot: Slot, v: Vec<f32>) {
        match slot {
            Slot::AudioSpectral => self.audio_spectral = Some(v),
            Slot::AudioSemantic => self.audio_semantic = Some(v),
            Slot::Image => self.image = Some(v),
        }
    }

    pub fn with(mut self, slot: Slot, v: Vec<f32>) -> Self {
        self.set(slot, v);
        self
    }

    pub fn present_mask(&self) -> [bool; 3] {
        Slot::ALL.map(|s| self.get(s).is_some())
    }

    /// Check that `slots` are present with their declared dimensions and
    /// finite values.
    pub fn validate(&self, slots: &[Slot]) -> Result<()> {
        for &slot in slots {
            let v = self
                .get(slot)
                .ok_or_else(|| Error::MissingSlot(slot.to_string()))?;
            if v.len() != slot.dim() {
                return Err(Error::DimensionMismatch {
                    slot: slot.to_string(),
                    expected: slot.dim(),
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::param(slot.name(), "non-finite embedding value"));
            }
        }
        Ok(())
    }
}

/// Append-only writer of one slot's embedding records.
///
/// Record layout (little-endian): `u32` id length, id bytes, `u8` slot tag,
/// `u32` dim, `dim` x `f32`.
pub fn write_embedding_records<'a>(
    path: impl AsRef<Path>,
    slot: Slot,
    records: impl IntoIterator<Item = (&'a str, &'a [f32])>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::from(e).at(path))?;
    let mut w = BufWriter::new(file);
    for (id, v) in records {
        if v.len() != slot.dim() {
            return Err(Error::DimensionMismatch {
                slot: slot.to_string(),
                expected: slot.dim(),
                found: v.len(),
            });
        }
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        w.write_all(&[slot.tag()])?;
        w.write_all(&(v.len() as u32).to_le_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read every record of an embedding file, checking the slot tag.
pub fn read_embedding_records(
    path: impl AsRef<Path>,
    slot: Slot,
) -> Result<BTreeMap<String, Vec<f32>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).at(path))?;
    let mut r = BufReader::new(file);
    let mut out = BTreeMap::new();
    let mut len_buf = [0u8; 4];
    loop {
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id_len = u32::from_le_bytes(len_buf) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let id =
            String::from_utf8(id).map_err(|_| Error::format("embedding store", "non-utf8 id"))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        if tag[0] != slot.tag() {
            return Err(Error::format(
                "embedding store",
                format!(
                    "record `{id}` has slot tag {} but file holds {slot}",
                    tag[0]
                ),
            )
            .at(path));
        }
        r.read_exact(&mut len_buf)?;
        let dim = u32::from_le_bytes(len_buf) as usize;
        if dim != slot.dim() {
            return Err(Error::DimensionMismatch {
                slot: slot.to_string(),
                expected: slot.dim(),
                found: dim,
            });
        }
        let mut payload = vec![0u8; dim * 4];
        r.read_exact(&mut payload)?;
        let v = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.insert(id, v);
    }
    Ok(out)
}

/// Embeddings for every slot of a dataset, keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    pub slots: BTreeMap<Slot, BTreeMap<String, Vec<f32>>>,
}

impl EmbeddingStore {
    pub fn file_name(slot: Slot) -> String {
        format!("{}.emb", slot.name())
    }

    /// Load every `<slot>.emb` present in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut store = EmbeddingStore::default();
        for slot in Slot::ALL {
            let p = dir.as_ref().join(Self::file_name(slot));
            if p.exists() {
                store.slots.insert(slot, read_embedding_records(&p, slot)?);
            }
        }
        Ok(store)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        for (slot, recs) in &self.slots {
            let p = dir.as_ref().join(Self::file_name(*slot));
            write_embedding_records(
                &p,
                *slot,
                recs.iter().map(|(k, v)| (k.as_str(), v.as_slice())),
            )?;
        }
        Ok(())
    }

    pub fn insert(&mut self, slot: Slot, id: &str, v: Vec<f32>) {
        self.slots
            .entry(slot)
            .or_default()
            .insert(id.to_string(), v);
    }

    pub fn bundle(&self, id: &str) -> EmbeddingBundle {
        let mut b = EmbeddingBundle::default();
        for (slot, recs) in &self.slots {
            if let Some(v) = recs.get(id) {
                b.set(*slot, v.clone());
            }
        }
        b
    }
}
