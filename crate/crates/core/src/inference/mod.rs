//! Streaming sliding-window classification and overlay export.

mod buffer;
mod overlay;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use buffer::{ready_windows, RollingBuffer, WindowedStream};
pub use overlay::{
    class_color, overlay_export, strip_class, OverlayParams, OverlaySummary, Timeline,
    TimelineEvent, NO_PREDICTION_COLOR, TIMELINE_FILE,
};

use crate::audio::{Waveform, WORKING_RATE};
use crate::class::{ContactClass, N_CLASSES};
use crate::dataset::{load_and_preprocess, pair_frame, CropSpec, Frame};
use crate::denoise::{spectral_gate, GateParams, NoiseProfile};
use crate::error::{Error, Result};
use crate::features::mel_spectrogram;
use crate::model::encoders::{encode_audio_builtin, encode_image_builtin, image_bias};
use crate::model::{predict, Checkpoint, EmbeddingBundle, EncoderKind, FusionModel, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestampMode {
    #[default]
    Midpoint,
    Start,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub window_frames: u32,
    pub stride_frames: u32,
    pub frame_rate: f64,
    pub audio_window_s: f64,
    pub timestamp: TimestampMode,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            window_frames: 30,
            stride_frames: 15,
            frame_rate: 30.0,
            audio_window_s: 0.8,
            timestamp: TimestampMode::Midpoint,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride_frames < 1 || self.stride_frames > self.window_frames {
            return Err(Error::param(
                "stride_frames",
                "must be in [1, window_frames]",
            ));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::param("frame_rate", "must be positive"));
        }
        if !(self.audio_window_s > 0.0) {
            return Err(Error::param("audio_window_s", "must be positive"));
        }
        Ok(())
    }

    pub fn stride_s(&self) -> f64 {
        self.stride_frames as f64 / self.frame_rate
    }

    pub fn clip_s(&self) -> f64 {
        self.window_frames as f64 / self.frame_rate
    }

    pub fn window_samples(&self, rate: u32) -> usize {
        (self.audio_window_s * rate as f64).round() as usize
    }

    pub fn stride_samples(&self, rate: u32) -> usize {
        (self.stride_s() * rate as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedPrediction {
    pub timestamp_s: f64,
    pub class: ContactClass,
    pub probabilities: [f64; N_CLASSES],
    pub processing_latency_ms: f64,
}

impl TimedPrediction {
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.class.index()]
    }

    /// Same window and outputs, ignoring latency.
    pub fn same_outputs(&self, other: &TimedPrediction) -> bool {
        self.timestamp_s.to_bits() == other.timestamp_s.to_bits()
            && self.class == other.class
            && self
                .probabilities
                .iter()
                .zip(&other.probabilities)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Fixed streaming denoiser: a pre-loaded profile, no online adaptation.
#[derive(Debug, Clone)]
pub struct StreamDenoise {
    pub profile: NoiseProfile,
    pub gate: GateParams,
}

/// Optional camera frames time-aligned with the audio.
#[derive(Debug, Clone, Default)]
pub struct FrameSource {
    pub frames: Vec<Frame>,
    pub audio_start_ns: i64,
    pub crop: CropSpec,
}

/// Per-window classification shared by streaming and offline modes.
pub struct WindowClassifier {
    model: Arc<FusionModel>,
    cfg: StreamConfig,
    denoise: Option<StreamDenoise>,
    frames: FrameSource,
    image_cache: HashMap<PathBuf, Vec<f32>>,
}

impl WindowClassifier {
    /// The model must use only slots the built-in encoders provide.
    pub fn new(model: Arc<FusionModel>, cfg: StreamConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(slot) = model
            .config()
            .slots
            .iter()
            .find(|s| **s == Slot::AudioSemantic)
        {
            return Err(Error::MissingSlot(format!(
                "{slot} (streaming inference computes built-in embeddings only)"
            )));
        }
        Ok(WindowClassifier {
            model,
            cfg,
            denoise: None,
            frames: FrameSource::default(),
            image_cache: HashMap::new(),
        })
    }

    /// Load a checkpoint trained on built-in embeddings.
    pub fn from_checkpoint(ck: Checkpoint, cfg: StreamConfig) -> Result<Self> {
        if ck.meta.encoder != EncoderKind::Builtin {
            return Err(Error::CheckpointMismatch(
                "checkpoint was trained on external embeddings; streaming needs built-in encoders"
                    .into(),
            ));
        }
        Self::new(Arc::new(ck.model), cfg)
    }

    pub fn with_denoise(mut self, d: StreamDenoise) -> Result<Self> {
        d.gate.validate()?;
        self.denoise = Some(d);
        Ok(self)
    }

    pub fn with_frames(mut self, frames: FrameSource) -> Self {
        self.frames = frames;
        self
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    fn image_embedding(&mut self, start_s: f64) -> Result<Vec<f32>> {
        let frame = pair_frame(
            &self.frames.frames,
            self.frames.audio_start_ns,
            start_s,
            self.cfg.audio_window_s,
        );
        let Some(f) = frame else {
            return Ok(image_bias().to_vec());
        };
        if let Some(e) = self.image_cache.get(&f.path) {
            return Ok(e.clone());
        }
        let e = encode_image_builtin(&load_and_preprocess(&f.path, &self.frames.crop)?);
        self.image_cache.insert(f.path.clone(), e.clone());
        Ok(e)
    }

    /// Classify the window with index `k` whose working-rate samples are
    /// `samples`.
    pub fn classify(&mut self, k: u64, samples: Vec<f64>) -> Result<TimedPrediction> {
        let started = Instant::now();
        let start_s = k as f64 * self.cfg.stride_s();
        let mut clip = Waveform::new(samples, WORKING_RATE)?;
        if let Some(d) = &self.denoise {
            clip = spectral_gate(&clip, &d.profile, &d.gate)?;
        }
        let mel = mel_spectrogram(&clip)?;
        let mut bundle = EmbeddingBundle::default();
        let model = self.model.clone();
        for &slot in &model.config().slots {
            match slot {
                Slot::AudioSpectral => bundle.set(slot, encode_audio_builtin(&mel)),
                Slot::Image => {
                    let e = self.image_embedding(start_s)?;
                    bundle.set(slot, e)
                }
                Slot::AudioSemantic => return Err(Error::MissingSlot(slot.to_string())),
            }
        }
        let p = predict(&self.model, &bundle)?;
        let timestamp_s = match self.cfg.timestamp {
            TimestampMode::Midpoint => start_s + self.cfg.audio_window_s / 2.0,
            TimestampMode::Start => start_s,
        };
        let processing_latency_ms = started.elapsed().as_secs_f64() * 1e3;
        log::debug!(
            "window {k} at {timestamp_s:.3}s -> {} ({processing_latency_ms:.2} ms)",
            p.class
        );
        Ok(TimedPrediction {
            timestamp_s,
            class: p.class,
            probabilities: p.probabilities,
            processing_latency_ms,
        })
    }
}

/// Push-driven streaming classifier over a rolling buffer.
pub struct StreamClassifier {
    inner: WindowClassifier,
    stream: WindowedStream,
}

impl StreamClassifier {
    /// `max_chunk` bounds the samples accepted per push; buffer memory is
    /// `max_chunk + window` samples regardless of stream length.
    pub fn new(inner: WindowClassifier, max_chunk: usize) -> Result<Self> {
        let cfg = *inner.config();
        let stream = WindowedStream::new(
            cfg.window_samples(WORKING_RATE),
            cfg.stride_samples(WORKING_RATE),
            max_chunk,
        )?;
        Ok(StreamClassifier { inner, stream })
    }

    pub fn buffer(&self) -> &RollingBuffer {
        self.stream.buffer()
    }

    /// Append working-rate samples; classify every window that became ready.
    /// An empty chunk yields nothing.
    pub fn push(&mut self, chunk: &[f64]) -> Result<Vec<TimedPrediction>> {
        self.stream
            .push(chunk)?
            .into_iter()
            .map(|(k, w)| self.inner.classify(k, w))
            .collect()
    }
}

/// Classify a whole recording by slicing windows directly; produces the
/// same outputs as streaming it in any chunking.
pub fn classify_offline(
    classifier: &mut WindowClassifier,
    audio: &Waveform,
) -> Result<Vec<TimedPrediction>> {
    audio.require_rate(WORKING_RATE)?;
    let cfg = *classifier.config();
    let w = cfg.window_samples(WORKING_RATE);
    let s = cfg.stride_samples(WORKING_RATE);
    let n = ready_windows(audio.len() as u64, w as u64, s as u64);
    (0..n)
        .map(|k| {
            let start = k as usize * s;
            classifier.classify(k, audio.samples()[start..start + w].to_vec())
        })
        .collect()
}

/// Stream `audio` through a classifier in chunks of `chunk` samples.
pub fn classify_stream(
    classifier: WindowClassifier,
    audio: &Waveform,
    chunk: usize,
) -> Result<Vec<TimedPrediction>> {
    audio.require_rate(WORKING_RATE)?;
    let chunk = chunk.max(1);
    let mut s = StreamClassifier::new(classifier, chunk)?;
    let mut out = Vec::new();
    for c in audio.samples().chunks(chunk) {
        out.extend(s.push(c)?);
    }
    Ok(out)
}

pub fn mean_latency_ms(preds: &[TimedPrediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().map(|p| p.processing_latency_ms).sum::<f64>() / preds.len() as f64
}
