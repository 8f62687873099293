use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::mel::{log_mel_frames, HOP_LENGTH, N_FFT, N_MELS, WIN_LENGTH};
use crate::audio::Waveform;
use crate::class::ContactClass;
use crate::error::{Error, Result};
use crate::stft::Stft;

pub const N_MFCC: usize = 13;

/// Clip-level scalar descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rms: f64,
    /// Crossings per second.
    pub zcr: f64,
    pub mfcc: [f64; N_MFCC],
    /// Hz.
    pub spectral_centroid: f64,
}

pub fn rms(w: &Waveform) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::EmptyInput("rms of empty waveform"));
    }
    let ss: f64 = w.samples().iter().map(|s| s * s).sum();
    Ok((ss / w.len() as f64).sqrt())
}

/// Sign changes per second. Zeros inherit the sign of the previous nonzero
/// sample; leading zeros carry no sign.
pub fn zero_crossing_rate(w: &Waveform) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::EmptyInput("zero crossing rate of empty waveform"));
    }
    let mut prev: Option<bool> = None;
    let mut crossings = 0usize;
    for &s in w.samples() {
        if s == 0.0 {
            continue;
        }
        let pos = s > 0.0;
        if prev.is_some_and(|p| p != pos) {
            crossings += 1;
        }
        prev = Some(pos);
    }
    Ok(crossings as f64 / w.duration_seconds())
}

/// Orthonormal DCT-II of `x`, first `n_out` coefficients.
pub fn dct2_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                .sum();
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            s * scale
        })
        .collect()
}

/// 13 cepstral coefficients of the clip-mean log-mel vector.
pub fn mfcc(w: &Waveform) -> Result<[f64; N_MFCC]> {
    let frames = log_mel_frames(w)?;
    let mut mean = vec![0.0; N_MELS];
    for f in &frames {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= frames.len() as f64);
    let c = dct2_ortho(&mean, N_MFCC);
    let mut out = [0.0; N_MFCC];
    out.copy_from_slice(&c);
    Ok(out)
}

/// Power-weighted mean frequency of the clip's average spectrum; 0 for silence.
pub fn spectral_centroid(w: &Waveform) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::EmptyInput("spectral centroid of empty waveform"));
    }
    let stft = Stft::new(N_FFT, WIN_LENGTH, HOP_LENGTH);
    let spec = stft.forward(w.samples(), w.len().div_ceil(HOP_LENGTH));
    let bin_hz = w.sample_rate() as f64 / N_FFT as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for frame in &spec {
        for (k, c) in frame.iter().enumerate() {
            let p = c.norm_sqr();
            num += k as f64 * bin_hz * p;
            den += p;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

pub fn extract_features(w: &Waveform) -> Result<FeatureVector> {
    Ok(FeatureVector {
        rms: rms(w)?,
        zcr: zero_crossing_rate(w)?,
        mfcc: mfcc(w)?,
        spectral_centroid: spectral_centroid(w)?,
    })
}

/// One CSV row of the scalar feature export.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub trial_id: String,
    pub segment_id: usize,
    pub window_start_s: f64,
    pub label: ContactClass,
    pub features: FeatureVector,
}

pub fn feature_csv_header() -> String {
    let mut cols = vec![
        "trial_id".to_string(),
        "segment_id".into(),
        "window_start_s".into(),
        "label".into(),
        "rms".into(),
        "zcr".into(),
    ];
    cols.extend((0..N_MFCC).map(|i| format!("mfcc_{i}")));
    cols.push("centroid".into());
    cols.join(",")
}

pub fn write_feature_csv(mut out: impl Write, rows: &[FeatureRow]) -> Result<()> {
    writeln!(out, "{}", feature_csv_header())?;
    for r in rows {
        let f = &r.features;
        write!(
            out,
            "{},{},{},{},{},{}",
            r.trial_id, r.segment_id, r.window_start_s, r.label, f.rms, f.zcr
        )?;
        for c in &f.mfcc {
            write!(out, ",{c}")?;
        }
        writeln!(out, ",{}", f.spectral_centroid)?;
    }
    Ok(())
}
