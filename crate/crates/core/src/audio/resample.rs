use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel across both sides, measured in
/// samples of the lower of the two rates.
const TAPS: f64 = 32.0;
const KAISER_BETA: f64 = 8.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
const CUTOFF: f64 = 0.95;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// Equal rates return the input unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::param("target_rate", "must be positive"));
    }
    if w.is_empty() {
        return Err(Error::EmptyInput("empty input"));
    }
    if target_rate == w.sample_rate() {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / w.sample_rate() as f64;
    let out_len = ((w.len() as u64 * target_rate as u64 + w.sample_rate() as u64 / 2)
        / w.sample_rate() as u64) as usize;
    Waveform::new(resample_by_ratio(w.samples(), ratio, out_len), target_rate)
}

/// Resample raw samples by `ratio` (output rate / input rate) into `out_len`
/// samples. Output sample `n` sits at input position `n / ratio`.
pub fn resample_by_ratio(input: &[f64], ratio: f64, out_len: usize) -> Vec<f64> {
    if input.is_empty() {
        return vec![0.0; out_len];
    }
    let scale = ratio.min(1.0);
    let cutoff = CUTOFF * scale;
    let half_width = TAPS / 2.0 / scale;
    let i0_beta = bessel_i0(KAISER_BETA);
    let last = input.len() as i64 - 1;

    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = ((t - half_width).ceil() as i64).max(0);
            let hi = ((t + half_width).floor() as i64).min(last);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for i in lo..=hi {
                let x = i as f64 - t;
                let u = x / half_width;
                let window = bessel_i0(KAISER_BETA * (1.0 - u * u).max(0.0).sqrt()) / i0_beta;
                let weight = sinc(cutoff * x) * window;
                acc += weight * input[i as usize];
                norm += weight;
            }
            if norm.abs() > 1e-12 {
                acc / norm
            } else {
                0.0
            }
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, rate: u32, seconds: f64, amp: f64) -> Waveform {
        let n = (rate as f64 * seconds) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    /// Frequency of the largest DFT magnitude bin.
    fn peak_frequency(w: &Waveform) -> (f64, f64) {
        let n = w.len();
        let mut buf: Vec<Complex<f64>> =
            w.samples().iter().map(|&s| Complex::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (k, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        let bin_hz = w.sample_rate() as f64 / n as f64;
        (k as f64 * bin_hz, bin_hz)
    }

    #[test]
    fn bessel_matches_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-12);
        assert!((bessel_i0(8.0) - 427.564_115_721_804_74).abs() < 1e-9);
    }

    #[test]
    fn identity_rate_is_exact() {
        let w = sine(440.0, 16_000, 0.1, 0.3);
        assert_eq!(resample(&w, 16_000).unwrap(), w);
    }

    #[test]
    fn empty_input_is_rejected() {
        let w = Waveform::new(vec![], 22_050).unwrap();
        let err = resample(&w, 16_000).unwrap_err();
        assert!(err.to_string().contains("empty input"));
    }

    #[test]
    fn dc_is_preserved() {
        let w = Waveform::new(vec![0.5; 22_050], 22_050).unwrap();
        let out = resample(&w, 16_000).unwrap();
        assert_eq!(out.len(), 16_000);
        assert_eq!(out.sample_rate(), 16_000);
        for &s in &out.samples()[160..out.len() - 160] {
            assert!((s - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn sine_peak_maps_to_same_frequency() {
        let w = sine(1000.0, 22_050, 1.0, 0.5);
        let (f_in, bin_in) = peak_frequency(&w);
        assert!((f_in - 1000.0).abs() <= bin_in);
        let out = resample(&w, 16_000).unwrap();
        let (f_out, bin_out) = peak_frequency(&out);
        assert!((f_out - 1000.0).abs() <= bin_out, "peak at {f_out}");
    }

    #[test]
    fn duration_within_one_sample() {
        for n in [1usize, 7, 999, 22_051] {
            let w = Waveform::new(vec![0.1; n], 22_050).unwrap();
            let out = resample(&w, 16_000).unwrap();
            assert!((out.duration_seconds() - w.duration_seconds()).abs() <= 1.0 / 16_000.0);
        }
    }

    #[test]
    fn round_trip_band_limited() {
        let rate = 16_000;
        let n = rate as usize;
        let s: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                0.4 * (2.0 * PI * 440.0 * t).sin()
                    + 0.2 * (2.0 * PI * 1250.0 * t + 0.3).sin()
                    + 0.1 * (2.0 * PI * 3100.0 * t + 1.1).sin()
            })
            .collect();
        let w = Waveform::new(s, rate).unwrap();
        for up in [22_050, 44_100, 48_000] {
            let back = resample(&resample(&w, up).unwrap(), rate).unwrap();
            assert_eq!(back.len(), w.len());
            let edge = rate as usize / 100;
            let (mut num, mut den) = (0.0, 0.0);
            for i in edge..n - edge {
                num += (back.samples()[i] - w.samples()[i]).powi(2);
                den += w.samples()[i].powi(2);
            }
            let rel = (num / den).sqrt();
            assert!(rel < 1e-3, "{up} Hz round trip rel L2 {rel}");
        }
    }
}
