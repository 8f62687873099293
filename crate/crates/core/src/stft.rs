//! Short-time Fourier transform with centered, zero-padded framing.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            n_fft: 512,
            hop: 128,
            window: WindowKind::Hann,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || !self.n_fft.is_power_of_two() {
            return Err(Error::param("n_fft", "must be a power of two"));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::param("hop", "must be in 1..=n_fft"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frames x bins complex spectrogram.
pub type Spectrogram = Vec<Vec<Complex<f64>>>;

/// Reusable transform: FFT plans plus the analysis window.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    /// Window zero-padded to `n_fft`, centered.
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    /// `win_length <= n_fft`; the window is centered inside the FFT frame.
    pub fn new(n_fft: usize, win_length: usize, hop: usize) -> Self {
        assert!(win_length <= n_fft && hop > 0);
        let mut window = vec![0.0; n_fft];
        let off = (n_fft - win_length) / 2;
        window[off..off + win_length].copy_from_slice(&hann(win_length));
        let mut planner = FftPlanner::new();
        Stft {
            n_fft,
            hop,
            window,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn from_params(p: &StftParams) -> Result<Self> {
        p.validate()?;
        Ok(Self::new(p.n_fft, p.n_fft, p.hop))
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a full centered analysis: `1 + len / hop`.
    pub fn centered_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Analyse `n_frames` frames; frame `k` is centered on sample `k * hop`
    /// and samples outside the signal are zero.
    pub fn forward(&self, x: &[f64], n_frames: usize) -> Spectrogram {
        let half = (self.n_fft / 2) as i64;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        (0..n_frames)
            .map(|k| {
                let start = (k * self.hop) as i64 - half;
                for (j, b) in buf.iter_mut().enumerate() {
                    let idx = start + j as i64;
                    let s = if idx >= 0 && (idx as usize) < x.len() {
                        x[idx as usize]
                    } else {
                        0.0
                    };
                    *b = Complex::new(s * self.window[j], 0.0);
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::forward`], cropped to `len`.
    pub fn inverse(&self, spec: &Spectrogram, len: usize) -> Vec<f64> {
        let half = (self.n_fft / 2) as i64;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let nb = self.n_bins();
        for (k, frame) in spec.iter().enumerate() {
            buf[..nb].copy_from_slice(frame);
            for j in nb..self.n_fft {
                buf[j] = frame[self.n_fft - j].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = (k * self.hop) as i64 - half;
            for j in 0..self.n_fft {
                let idx = start + j as i64;
                if idx < 0 || idx as usize >= len {
                    continue;
                }
                let w = self.window[j];
                out[idx as usize] += buf[j].re / self.n_fft as f64 * w;
                norm[idx as usize] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-10 {
                *o /= n;
            }
        }
        out
    }
}
