use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// Smoothed amplitude time series. Index `k` sits at
/// `start_offset_seconds + k * hop_seconds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub values: Vec<f64>,
    pub hop_seconds: f64,
    pub start_offset_seconds: f64,
}

impl Envelope {
    pub fn new(values: Vec<f64>, hop_seconds: f64) -> Self {
        Envelope {
            values,
            hop_seconds,
            start_offset_seconds: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_of(&self, k: usize) -> f64 {
        self.start_offset_seconds + k as f64 * self.hop_seconds
    }

    pub fn scaled(&self, a: f64) -> Envelope {
        Envelope {
            values: self.values.iter().map(|v| v * a).collect(),
            ..self.clone()
        }
    }

    /// Reduce to at most `points` values, keeping the maximum of each bucket
    /// so short bursts survive. Returns `(time, value)` pairs.
    pub fn downsample_max(&self, points: usize) -> Vec<(f64, f64)> {
        if points == 0 || self.values.is_empty() {
            return Vec::new();
        }
        if self.values.len() <= points {
            return self
                .values
                .iter()
                .enumerate()
                .map(|(k, &v)| (self.time_of(k), v))
                .collect();
        }
        let n = self.values.len();
        (0..points)
            .map(|b| {
                let lo = b * n / points;
                let hi = ((b + 1) * n / points).max(lo + 1);
                let v = self.values[lo..hi].iter().copied().fold(0.0, f64::max);
                (self.time_of(lo), v)
            })
            .collect()
    }
}

/// Framing of the smoothed envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub window_seconds: f64,
    pub hop_seconds: f64,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        EnvelopeParams {
            window_seconds: 0.05,
            hop_seconds: 0.01,
        }
    }
}

/// Mean absolute amplitude over centered windows.
///
/// Frame `k` is centered on sample `round(k * hop * rate)`; windows that run
/// past either end of the signal are truncated and averaged over the samples
/// they do cover. The envelope has `ceil(duration / hop)` frames.
pub fn smoothed_envelope(w: &Waveform, window_seconds: f64, hop_seconds: f64) -> Result<Envelope> {
    if !(window_seconds > 0.0) || !window_seconds.is_finite() {
        return Err(Error::param("window_seconds", "must be positive"));
    }
    if !(hop_seconds > 0.0) || !hop_seconds.is_finite() {
        return Err(Error::param("hop_seconds", "must be positive"));
    }
    if hop_seconds > window_seconds {
        return Err(Error::param(
            "hop_seconds",
            "must not exceed window_seconds",
        ));
    }
    if w.is_empty() {
        return Err(Error::EmptyInput("waveform"));
    }
    let rate = w.sample_rate() as f64;
    let window = ((window_seconds * rate).round() as usize).max(1);
    if window > w.len() {
        return Err(Error::TooShort {
            what: "waveform",
            min_seconds: window_seconds,
            got_seconds: w.duration_seconds(),
        });
    }
    let hop_samples = hop_seconds * rate;
    let n_frames = ((w.len() as f64 / hop_samples) - 1e-9).ceil().max(1.0) as usize;
    let x = w.samples();
    let values = (0..n_frames)
        .map(|k| {
            let center = (k as f64 * hop_samples).round() as i64;
            let lo = (center - (window / 2) as i64).max(0) as usize;
            let hi = ((center - (window / 2) as i64 + window as i64).max(0) as usize).min(x.len());
            if hi <= lo {
                return 0.0;
            }
            // incremental mean: exact for constant windows
            let mut mean = 0.0;
            for (i, s) in x[lo..hi].iter().enumerate() {
                mean += (s.abs() - mean) / (i + 1) as f64;
            }
            mean
        })
        .collect();
    Ok(Envelope::new(values, hop_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_signal_gives_constant_envelope() {
        let w = Waveform::new(vec![-0.37; 16_000], 16_000).unwrap();
        let e = smoothed_envelope(&w, 0.05, 0.01).unwrap();
        assert_eq!(e.len(), 100);
        assert!(e.values.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn impulse_peak_is_one_over_window() {
        let mut s = vec![0.0; 16_000];
        s[8_000] = 1.0;
        let w = Waveform::new(s, 16_000).unwrap();
        let e = smoothed_envelope(&w, 0.05, 0.01).unwrap();
        // Direct oracle: frame 50 is centered on sample 8000 and spans 800 samples.
        let peak = e.values.iter().copied().fold(0.0, f64::max);
        assert!((peak - 1.0 / 800.0).abs() < 1e-15);
        assert_eq!(peak, e.values[50]);
    }

    #[test]
    fn sine_envelope_is_two_a_over_pi() {
        let amp = 0.6;
        let rate = 16_000;
        let s: Vec<f64> = (0..rate * 2)
            .map(|i| amp * (2.0 * PI * 500.0 * i as f64 / rate as f64).sin())
            .collect();
        let w = Waveform::new(s, rate as u32).unwrap();
        // Numerical oracle: mean |A sin| over one period by midpoint quadrature.
        let n = 100_000;
        let oracle: f64 = (0..n)
            .map(|i| (amp * (2.0 * PI * (i as f64 + 0.5) / n as f64).sin()).abs())
            .sum::<f64>()
            / n as f64;
        assert!((oracle - 2.0 * amp / PI).abs() < 1e-6);
        let e = smoothed_envelope(&w, 0.05, 0.01).unwrap();
        for &v in &e.values[5..e.len() - 5] {
            assert!((v - oracle).abs() / oracle < 0.02);
        }
    }

    #[test]
    fn length_is_ceil_duration_over_hop() {
        let w = Waveform::new(vec![0.1; 16_001], 16_000).unwrap();
        assert_eq!(smoothed_envelope(&w, 0.05, 0.01).unwrap().len(), 101);
    }

    #[test]
    fn bad_parameters() {
        let w = Waveform::new(vec![0.1; 16_000], 16_000).unwrap();
        assert!(smoothed_envelope(&w, 0.0, 0.01).is_err());
        assert!(smoothed_envelope(&w, 0.05, -1.0).is_err());
        assert!(smoothed_envelope(&w, 0.05, 0.1).is_err());
    }

    #[test]
    fn downsample_keeps_peaks() {
        let mut values = vec![0.0; 1000];
        values[517] = 3.0;
        let e = Envelope::new(values, 0.01);
        let pts = e.downsample_max(10);
        assert_eq!(pts.len(), 10);
        assert_eq!(pts[5].1, 3.0);
        assert!((pts[5].0 - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sign_flip_and_scaling(samples in prop::collection::vec(-1.0f64..1.0, 900..3000), a in 0.0f64..20.0) {
            let w = Waveform::new(samples.clone(), 16_000).unwrap();
            let neg = Waveform::new(samples.iter().map(|s| -s).collect(), 16_000).unwrap();
            let e = smoothed_envelope(&w, 0.05, 0.01).unwrap();
            prop_assert_eq!(&smoothed_envelope(&neg, 0.05, 0.01).unwrap(), &e);
            let scaled = smoothed_envelope(&w.scaled(a), 0.05, 0.01).unwrap();
            for (x, y) in e.values.iter().zip(&scaled.values) {
                prop_assert!((a * x - y).abs() <= 1e-9 * (a * x).abs().max(1e-300));
            }
            prop_assert!(e.values.iter().all(|&v| v >= 0.0));
        }
    }
}
