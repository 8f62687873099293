//! Spectral gating against a pre-recorded noise reference.
//!
//! A [`NoiseProfile`] holds per-bin statistics of the reference's
//! log-magnitude spectrogram. Gating builds a soft mask that keeps bins whose
//! level exceeds `mean + n_std * std` and attenuates the rest by up to
//! `prop_decrease`, smooths it over frequency and time, and resynthesises.

use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::stft::{Spectrogram, Stft, StftParams, WindowKind};

/// Magnitudes are clamped here before taking statistics.
pub const LOG_FLOOR_DB: f64 = -100.0;
pub const MIN_REFERENCE_SECONDS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub mean_db: Vec<f64>,
    pub std_db: Vec<f64>,
}

impl NoiseProfile {
    pub fn stft_params(&self) -> StftParams {
        StftParams {
            n_fft: self.n_fft,
            hop: self.hop,
            window: WindowKind::Hann,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        let p: NoiseProfile = serde_json::from_str(&text).map_err(|e| Error::from(e).at(path))?;
        p.stft_params().validate()?;
        if p.mean_db.len() != p.n_fft / 2 + 1 || p.std_db.len() != p.mean_db.len() {
            return Err(Error::format("noise profile", "bin count does not match n_fft").at(path));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// One of the bundled profiles, `probe` or `robot`.
    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "probe" => include_str!("../fixtures/profiles/probe.json"),
            "robot" => include_str!("../fixtures/profiles/robot.json"),
            _ => return None,
        };
        serde_json::from_str(text).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub n_std_thresh: f64,
    pub prop_decrease: f64,
    /// Box width of mask smoothing along frequency, in bins.
    pub mask_smooth_freq_bins: usize,
    /// Box width of mask smoothing along time, in frames.
    pub mask_smooth_time_frames: usize,
    /// Level span (dB) over which the mask rises from 10% to 90%.
    pub transition_db: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams {
            n_std_thresh: 1.5,
            prop_decrease: 1.0,
            mask_smooth_freq_bins: 3,
            mask_smooth_time_frames: 5,
            transition_db: 3.0,
        }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prop_decrease) {
            return Err(Error::param("prop_decrease", "must be in [0, 1]"));
        }
        if !(self.transition_db > 0.0) {
            return Err(Error::param("transition_db", "must be positive"));
        }
        Ok(())
    }
}

fn to_db(mag: f64) -> f64 {
    (20.0 * mag.log10()).max(LOG_FLOOR_DB)
}

pub fn build_noise_profile(reference: &Waveform, sp: &StftParams) -> Result<NoiseProfile> {
    sp.validate()?;
    if reference.duration_seconds() < MIN_REFERENCE_SECONDS {
        return Err(Error::TooShort {
            what: "noise reference",
            min_seconds: MIN_REFERENCE_SECONDS,
            got_seconds: reference.duration_seconds(),
        });
    }
    let stft = Stft::from_params(sp)?;
    let spec = stft.forward(reference.samples(), stft.centered_frames(reference.len()));
    let n_bins = sp.n_bins();
    let n = spec.len() as f64;
    let mut mean = vec![0.0; n_bins];
    for frame in &spec {
        for (m, c) in mean.iter_mut().zip(frame) {
            *m += to_db(c.norm());
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; n_bins];
    for frame in &spec {
        for ((v, c), m) in var.iter_mut().zip(frame).zip(&mean) {
            *v += (to_db(c.norm()) - m).powi(2);
        }
    }
    Ok(NoiseProfile {
        n_fft: sp.n_fft,
        hop: sp.hop,
        sample_rate: reference.sample_rate(),
        mean_db: mean,
        std_db: var.into_iter().map(|v| (v / n).sqrt()).collect(),
    })
}

/// Soft gating mask (frames x bins), values in `[1 - prop_decrease, 1]`.
pub fn gate_mask(spec: &Spectrogram, profile: &NoiseProfile, gp: &GateParams) -> Vec<Vec<f64>> {
    // logistic goes 0.1 -> 0.9 over 2 ln 9 units
    let scale = gp.transition_db / (2.0 * 9f64.ln());
    let raw: Vec<Vec<f64>> = spec
        .iter()
        .map(|frame| {
            frame
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let thresh = profile.mean_db[k] + gp.n_std_thresh * profile.std_db[k];
                    let pass = 1.0 / (1.0 + (-(to_db(c.norm()) - thresh) / scale).exp());
                    1.0 - gp.prop_decrease * (1.0 - pass)
                })
                .collect()
        })
        .collect();
    let smoothed = box_smooth(&raw, gp.mask_smooth_time_frames, gp.mask_smooth_freq_bins);
    let lo = 1.0 - gp.prop_decrease;
    smoothed
        .into_iter()
        .map(|row| row.into_iter().map(|m| m.clamp(lo, 1.0)).collect())
        .collect()
}

/// Mean over a centered `frames x bins` box, truncated at the edges.
fn box_smooth(m: &[Vec<f64>], frames: usize, bins: usize) -> Vec<Vec<f64>> {
    if m.is_empty() || (frames <= 1 && bins <= 1) {
        return m.to_vec();
    }
    let (nt, nf) = (m.len(), m[0].len());
    let (ht, hf) = (frames.max(1) / 2, bins.max(1) / 2);
    let (wt, wf) = (frames.max(1), bins.max(1));
    // separable: frequency pass then time pass
    let freq: Vec<Vec<f64>> = m
        .iter()
        .map(|row| {
            (0..nf)
                .map(|k| {
                    let lo = k.saturating_sub(hf);
                    let hi = (k + wf - hf).min(nf);
                    row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
                })
                .collect()
        })
        .collect();
    (0..nt)
        .map(|t| {
            let lo = t.saturating_sub(ht);
            let hi = (t + wt - ht).min(nt);
            (0..nf)
                .map(|k| freq[lo..hi].iter().map(|r| r[k]).sum::<f64>() / (hi - lo) as f64)
                .collect()
        })
        .collect()
}

/// Denoise `w` against `profile`. Output has the same length as the input.
pub fn spectral_gate(w: &Waveform, profile: &NoiseProfile, gp: &GateParams) -> Result<Waveform> {
    gp.validate()?;
    w.require_rate(profile.sample_rate)?;
    if w.is_empty() {
        return Ok(w.clone());
    }
    let stft = Stft::from_params(&profile.stft_params())?;
    let mut spec = stft.forward(w.samples(), stft.centered_frames(w.len()));
    let mask = gate_mask(&spec, profile, gp);
    for (frame, mrow) in spec.iter_mut().zip(&mask) {
        for (c, m) in frame.iter_mut().zip(mrow) {
            *c *= *m;
        }
    }
    Waveform::new(stft.inverse(&spec, w.len()), w.sample_rate())
}

/// Deterministic synthetic noise used to build the bundled profiles.
///
/// `probe`: broadband static. `robot`: static plus a motor hum with
/// harmonics and a low generator rumble.
pub fn synthetic_embodiment_noise(name: &str, seconds: f64, rate: u32, seed: u64) -> Waveform {
    let n = (seconds * rate as f64) as usize;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let tau = 2.0 * std::f64::consts::PI;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let hiss = 0.003 * normal.sample(&mut rng);
            match name {
                "robot" => {
                    hiss * 2.0
                        + 0.01 * (tau * 120.0 * t).sin()
                        + 0.006 * (tau * 240.0 * t + 0.4).sin()
                        + 0.003 * (tau * 360.0 * t + 1.3).sin()
                        + 0.008 * (tau * 45.0 * t).sin()
                }
                _ => hiss,
            }
        })
        .collect();
    Waveform::new(samples, rate).expect("finite synthetic noise")
}
