use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::image::{load_and_preprocess, CropSpec};
use super::manifest::{
    ImageRef, Manifest, SampleRecord, Split, FLAG_AUGMENTED, FLAG_IMAGE_MISSING,
};
use super::split::stratified_split;
use super::tensor::write_tensor;
use super::trial::TrialRecording;
use super::window::{pair_frame, window_segments};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::mel::{N_FRAMES, N_MELS};
use crate::features::{mel_spectrogram, AugmentParams, Augmenter, MEL_VERSION};
use crate::model::encoders::{encode_audio_builtin, encode_image_builtin, IMAGE_SIZE};
use crate::model::{EmbeddingStore, Slot};
use crate::segmentation::SegmentDocument;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MELS_DIR: &str = "mels";
pub const IMAGES_DIR: &str = "images";
pub const EMBEDDINGS_DIR: &str = "embeddings";
pub const TENSOR_EXT: &str = "cstf";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SplitPolicy {
    /// Group-aware stratified split by trial.
    Stratified { ratio: f64, seed: u64 },
    /// Every sample gets the same split (e.g. a held-out test set).
    Fixed(Split),
}

#[derive(Debug, Clone, Serialize)]
pub struct AugmentSpec {
    pub params: AugmentParams,
    /// Augmented copies per training sample.
    pub copies: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetParams {
    pub window_len_s: f64,
    pub stride_s: f64,
    pub split: SplitPolicy,
    /// Write mel and image tensor files.
    pub materialize: bool,
    /// Write built-in encoder embeddings.
    pub builtin_embeddings: bool,
    pub augment: Option<AugmentSpec>,
    /// Keep at most this many samples per class, chosen by seeded shuffle.
    pub balance_cap: Option<usize>,
    pub crop: CropSpec,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            window_len_s: 0.8,
            stride_s: 0.4,
            split: SplitPolicy::Stratified {
                ratio: 0.8,
                seed: 0,
            },
            materialize: true,
            builtin_embeddings: true,
            augment: None,
            balance_cap: None,
            crop: CropSpec::default(),
        }
    }
}

impl DatasetParams {
    /// Hash of every constant that changes the materialized features.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct F<'a> {
            mel: &'static str,
            image_size: usize,
            crop: &'a CropSpec,
            window_len_s: f64,
            augment: Option<&'a AugmentSpec>,
        }
        let f = F {
            mel: MEL_VERSION,
            image_size: IMAGE_SIZE,
            crop: &self.crop,
            window_len_s: self.window_len_s,
            augment: self.augment.as_ref(),
        };
        crate::util::sha256_hex(&serde_json::to_vec(&f).expect("serializable"))
    }
}

/// A trial with its reviewed segment file.
#[derive(Debug, Clone)]
pub struct TrialInput {
    pub trial: TrialRecording,
    pub segments: SegmentDocument,
}

#[derive(Debug, Default)]
struct TrialOutput {
    records: Vec<SampleRecord>,
    embeddings: Vec<(Slot, String, Vec<f32>)>,
}

fn sample_id(trial: &str, seg: usize, win: usize) -> String {
    format!("{trial}-{seg:02}-{win:03}")
}

pub fn mel_path(out: &Path, id: &str) -> PathBuf {
    out.join(MELS_DIR).join(format!("{id}.{TENSOR_EXT}"))
}

pub fn image_path(out: &Path, id: &str) -> PathBuf {
    out.join(IMAGES_DIR).join(format!("{id}.{TENSOR_EXT}"))
}

fn emit_audio(
    out_dir: Option<&Path>,
    params: &DatasetParams,
    id: &str,
    audio: &Waveform,
    sink: &mut TrialOutput,
) -> Result<()> {
    if out_dir.is_none() || !(params.materialize || params.builtin_embeddings) {
        return Ok(());
    }
    let mel = mel_spectrogram(audio)?;
    if let (Some(dir), true) = (out_dir, params.materialize) {
        write_tensor(&mel_path(dir, id), &[1, N_MELS, N_FRAMES], &mel.values)?;
    }
    if params.builtin_embeddings {
        sink.embeddings.push((
            Slot::AudioSpectral,
            id.to_string(),
            encode_audio_builtin(&mel),
        ));
    }
    Ok(())
}

fn process_trial(
    input: &TrialInput,
    params: &DatasetParams,
    out_dir: Option<&Path>,
) -> Result<TrialOutput> {
    let trial = &input.trial;
    let windows = window_segments(
        &input.segments.segments,
        trial.meta.declared_class,
        params.window_len_s,
        params.stride_s,
    )?;
    let mut out = TrialOutput::default();
    if windows.is_empty() {
        return Ok(out);
    }
    let audio = trial.load_audio()?;
    let mut image_cache: HashMap<PathBuf, (Vec<f32>, Vec<f32>)> = HashMap::new();
    for w in windows {
        let id = sample_id(&trial.trial_id, w.segment_index, w.window_index);
        let frame = pair_frame(&trial.frames, trial.meta.audio_start_ns, w.start_s, w.len_s);
        let mut flags = Vec::new();
        let image_ref = match frame {
            Some(f) => {
                let rel = f
                    .path
                    .strip_prefix(&trial.dir)
                    .unwrap_or(&f.path)
                    .to_string_lossy()
                    .replace('\\', "/");
                Some(ImageRef {
                    frame: rel,
                    timestamp_ns: f.timestamp_ns,
                    crop: params.crop,
                })
            }
            None => {
                flags.push(FLAG_IMAGE_MISSING.to_string());
                None
            }
        };
        let clip = audio.slice_seconds(w.start_s, w.len_s);
        emit_audio(out_dir, params, &id, &clip, &mut out)?;
        if let (Some(f), Some(dir)) = (frame, out_dir) {
            if params.materialize || params.builtin_embeddings {
                if !image_cache.contains_key(&f.path) {
                    let t = load_and_preprocess(&f.path, &params.crop)?;
                    let e = if params.builtin_embeddings {
                        encode_image_builtin(&t)
                    } else {
                        Vec::new()
                    };
                    image_cache.insert(f.path.clone(), (t, e));
                }
                let (t, e) = &image_cache[&f.path];
                if params.materialize {
                    let c = params.crop.crop as usize;
                    write_tensor(&image_path(dir, &id), &[3, c, c], t)?;
                }
                if params.builtin_embeddings {
                    out.embeddings.push((Slot::Image, id.clone(), e.clone()));
                }
            }
        }
        out.records.push(SampleRecord {
            sample_id: id,
            trial_id: trial.trial_id.clone(),
            segment_index: w.segment_index,
            window_start_s: w.start_s,
            window_len_s: w.len_s,
            label: w.label,
            image_ref,
            split: Split::Train,
            embodiment: trial.meta.embodiment,
            flags,
        });
    }
    Ok(out)
}

fn augment_trial(
    trial: &TrialRecording,
    records: &[&SampleRecord],
    spec: &AugmentSpec,
    augmenter: &Augmenter,
    params: &DatasetParams,
    out_dir: Option<&Path>,
    base_embeddings: &BTreeMap<String, Vec<f32>>,
) -> Result<(Vec<SampleRecord>, TrialOutput)> {
    let audio = trial.load_audio()?;
    let mut sink = TrialOutput::default();
    let mut recs = Vec::new();
    for r in records {
        let clip = audio.slice_seconds(r.window_start_s, r.window_len_s);
        for k in 1..=spec.copies {
            let seed_material = format!("{}:{}:{k}", spec.params.seed, r.sample_id);
            let digest = crate::util::sha256_hex(seed_material.as_bytes());
            let seed = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let aug = augmenter.augment(&clip, &mut rng)?;
            let id = format!("{}-aug{k}", r.sample_id);
            emit_audio(out_dir, params, &id, &aug, &mut sink)?;
            if let Some(dir) = out_dir {
                if params.materialize && r.image_ref.is_some() {
                    let src = image_path(dir, &r.sample_id);
                    std::fs::copy(&src, image_path(dir, &id))
                        .map_err(|e| Error::from(e).at(&src))?;
                }
            }
            if let Some(e) = base_embeddings.get(&r.sample_id) {
                sink.embeddings.push((Slot::Image, id.clone(), e.clone()));
            }
            let mut rec = (*r).clone();
            rec.sample_id = id;
            rec.flags.push(FLAG_AUGMENTED.to_string());
            recs.push(rec);
        }
    }
    Ok((recs, sink))
}

fn apply_balance_cap(records: Vec<SampleRecord>, cap: usize, seed: u64) -> Vec<SampleRecord> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken = [0usize; 4];
    let mut keep = vec![false; records.len()];
    for i in idx {
        let c = records[i].label.index();
        if taken[c] < cap {
            taken[c] += 1;
            keep[i] = true;
        }
    }
    records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

/// Window, pair, split and (optionally) materialize a dataset.
///
/// With `out_dir`, writes `manifest.jsonl`, tensor files under `mels/` and
/// `images/`, and built-in embeddings under `embeddings/`. The manifest is
/// written last, atomically.
pub fn build_dataset(
    inputs: &[TrialInput],
    params: &DatasetParams,
    out_dir: Option<&Path>,
) -> Result<Manifest> {
    if !(params.window_len_s > 0.0) || !(params.stride_s > 0.0) {
        return Err(Error::param("window", "length and stride must be positive"));
    }
    for i in inputs {
        if i.segments.trial_id != i.trial.trial_id {
            return Err(Error::param(
                "segments",
                format!(
                    "segment file for `{}` paired with trial `{}`",
                    i.segments.trial_id, i.trial.trial_id
                ),
            ));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).at(dir))?;
    }
    let outputs: Vec<TrialOutput> = inputs
        .par_iter()
        .map(|i| process_trial(i, params, out_dir).map_err(|e| e.at(&i.trial.dir)))
        .collect::<Result<_>>()?;
    let mut store = EmbeddingStore::default();
    let mut records = Vec::new();
    for o in outputs {
        records.extend(o.records);
        for (slot, id, v) in o.embeddings {
            store.insert(slot, &id, v);
        }
    }
    if let Some(cap) = params.balance_cap {
        let seed = match params.split {
            SplitPolicy::Stratified { seed, .. } => seed,
            SplitPolicy::Fixed(_) => 0,
        };
        records = apply_balance_cap(records, cap, seed);
    }
    match params.split {
        SplitPolicy::Stratified { ratio, seed } => {
            if !records.is_empty() {
                stratified_split(&mut records, ratio, seed)?;
            }
        }
        SplitPolicy::Fixed(s) => records.iter_mut().for_each(|r| r.split = s),
    }

    if let Some(spec) = params.augment.as_ref().filter(|a| a.copies > 0) {
        let augmenter = Augmenter::new(spec.params.clone())?;
        let image_emb = store.slots.get(&Slot::Image).cloned().unwrap_or_default();
        let by_trial: Vec<(&TrialInput, Vec<&SampleRecord>)> = inputs
            .iter()
            .map(|i| {
                let recs = records
                    .iter()
                    .filter(|r| r.trial_id == i.trial.trial_id && r.split == Split::Train)
                    .collect();
                (i, recs)
            })
            .filter(|(_, r): &(_, Vec<_>)| !r.is_empty())
            .collect();
        let augmented: Vec<(Vec<SampleRecord>, TrialOutput)> = by_trial
            .par_iter()
            .map(|(i, recs)| {
                augment_trial(
                    &i.trial, recs, spec, &augmenter, params, out_dir, &image_emb,
                )
            })
            .collect::<Result<_>>()?;
        for (recs, sink) in augmented {
            records.extend(recs);
            for (slot, id, v) in sink.embeddings {
                store.insert(slot, &id, v);
            }
        }
    }

    let n_flagged = records
        .iter()
        .filter(|r| r.has_flag(FLAG_IMAGE_MISSING))
        .count();
    if n_flagged > 0 {
        log::warn!(
            "{n_flagged} of {} samples have no paired frame",
            records.len()
        );
    }
    let manifest = Manifest::new(params.fingerprint(), records);
    manifest.validate()?;
    if let Some(dir) = out_dir {
        if params.builtin_embeddings {
            store.save_dir(dir.join(EMBEDDINGS_DIR))?;
        }
        manifest.save(dir.join(MANIFEST_FILE))?;
    }
    Ok(manifest)
}
