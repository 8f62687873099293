use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, WORKING_RATE};
use crate::error::{Error, Result};
use crate::stft::Stft;

pub const N_MELS: usize = 128;
pub const N_FRAMES: usize = 1024;
pub const WIN_LENGTH: usize = 400;
pub const HOP_LENGTH: usize = 160;
pub const N_FFT: usize = 512;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8000.0;
pub const FLOOR_DB: f32 = -100.0;
/// Identifies the analysis constants above; part of dataset fingerprints.
pub const MEL_VERSION: &str = "mel-v1:slaney:nfft512:win400:hop160:mels128:0-8000:floor-100";

/// Slaney mel scale (linear below 1 kHz, logarithmic above).
pub fn hz_to_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// Triangular, area-normalized mel filters over FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first bin index and the nonzero weights from there.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Self {
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let norm = 2.0 / (hi - lo);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
                        (w > 0.0).then_some((k, w * norm))
                    })
                    .collect();
                match weights.first() {
                    Some(&(first, _)) => (first, weights.iter().map(|&(_, w)| w).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();
        MelFilterbank { filters }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, w)| w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Log-mel spectrogram padded to a fixed 128 x 1024 grid.
///
/// Real frames are left-aligned; the trailing `pad_frames` columns hold
/// [`FLOOR_DB`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    /// Mel-major: `values[mel * N_FRAMES + frame]`.
    pub values: Vec<f32>,
    pub sample_rate: u32,
    pub pad_frames: usize,
}

impl MelSpectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * N_FRAMES + frame]
    }

    pub fn real_frames(&self) -> usize {
        N_FRAMES - self.pad_frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (N_MELS, self.values.len() / N_MELS)
    }
}

/// Log-mel frames (frame-major, one `Vec` of `N_MELS` dB values per frame).
///
/// Frame `k` is centered on sample `k * hop` with zero padding outside the
/// signal; a clip of `n` samples yields `ceil(n / hop)` frames.
pub fn log_mel_frames(w: &Waveform) -> Result<Vec<Vec<f64>>> {
    w.require_rate(WORKING_RATE)?;
    if w.is_empty() {
        return Err(Error::EmptyInput("mel spectrogram of empty clip"));
    }
    let n_frames = w.len().div_ceil(HOP_LENGTH);
    if n_frames > N_FRAMES {
        return Err(Error::ExceedsFrameBudget {
            frames: n_frames,
            max: N_FRAMES,
        });
    }
    let stft = Stft::new(N_FFT, WIN_LENGTH, HOP_LENGTH);
    let bank = filterbank();
    let floor = 10f64.powf(FLOOR_DB as f64 / 10.0);
    Ok(stft
        .forward(w.samples(), n_frames)
        .iter()
        .map(|frame| {
            let power: Vec<f64> = frame.iter().map(|c| c.norm_sqr()).collect();
            bank.apply(&power)
                .into_iter()
                .map(|e| 10.0 * e.max(floor).log10())
                .collect()
        })
        .collect())
}

fn filterbank() -> &'static MelFilterbank {
    static BANK: std::sync::OnceLock<MelFilterbank> = std::sync::OnceLock::new();
    BANK.get_or_init(|| MelFilterbank::new(N_MELS, N_FFT, WORKING_RATE, F_MIN, F_MAX))
}

pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    let frames = log_mel_frames(w)?;
    let mut values = vec![FLOOR_DB; N_MELS * N_FRAMES];
    for (t, frame) in frames.iter().enumerate() {
        for (m, &v) in frame.iter().enumerate() {
            values[m * N_FRAMES + t] = (v as f32).max(FLOOR_DB);
        }
    }
    Ok(MelSpectrogram {
        values,
        sample_rate: w.sample_rate(),
        pad_frames: N_FRAMES - frames.len(),
    })
}
