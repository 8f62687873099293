//! Waveform representation, WAV I/O, resampling and amplitude envelopes.

mod envelope;
mod resample;
mod wav;

pub use envelope::{smoothed_envelope, Envelope, EnvelopeParams};
pub use resample::{resample, resample_by_ratio};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Working sample rate of every model-facing feature.
pub const WORKING_RATE: u32 = 16_000;

/// Mono audio with its sample rate. Samples are nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::param(
                "samples",
                format!("non-finite sample at index {i}"),
            ));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn from_f32(samples: &[f32], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&s| s as f64).collect(), sample_rate)
    }

    pub fn silence(n: usize, sample_rate: u32) -> Self {
        Waveform {
            samples: vec![0.0; n],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sub-range `[start, start + len)` in samples, clamped to the signal.
    pub fn slice(&self, start: usize, len: usize) -> Waveform {
        let s = start.min(self.samples.len());
        let e = (start + len).min(self.samples.len());
        Waveform {
            samples: self.samples[s..e].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Window starting at `start_s` lasting `len_s`, clamped to the signal.
    pub fn slice_seconds(&self, start_s: f64, len_s: f64) -> Waveform {
        let rate = self.sample_rate as f64;
        let start = (start_s * rate).round().max(0.0) as usize;
        let len = (len_s * rate).round().max(0.0) as usize;
        self.slice(start, len)
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::SampleRateMismatch {
                expected: rate,
                found: self.sample_rate,
            });
        }
        Ok(())
    }
}
