use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scalar::rms;
use crate::audio::{read_wav, resample, resample_by_ratio, Waveform, WORKING_RATE};
use crate::error::{Error, Result};

/// Closed interval `[lo, hi]` drawn uniformly; `lo == hi` is a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn fixed(v: f64) -> Self {
        Range { lo: v, hi: v }
    }

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = Range { lo, hi };
        r.validate("range")?;
        Ok(r)
    }

    fn validate(&self, field: &str) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi {
            return Err(Error::param(field, "range must satisfy lo <= hi"));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        // always consume one draw so later draws do not shift
        let u: f64 = rng.random();
        if self.lo == self.hi {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * u
        }
    }
}

/// Training-time augmentation settings. SNR ranges set to `None` disable
/// that step (equivalent to an infinite SNR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub pitch_semitones: Range,
    pub gain_db: Range,
    pub noise_snr_db: Option<Range>,
    pub motor_snr_db: Option<Range>,
    #[serde(default)]
    pub motor_noise_bank: Vec<PathBuf>,
    pub seed: u64,
}

impl AugmentParams {
    pub fn identity(seed: u64) -> Self {
        AugmentParams {
            pitch_semitones: Range::fixed(0.0),
            gain_db: Range::fixed(0.0),
            noise_snr_db: None,
            motor_snr_db: None,
            motor_noise_bank: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pitch_semitones.validate("pitch_semitones")?;
        self.gain_db.validate("gain_db")?;
        if let Some(r) = &self.noise_snr_db {
            r.validate("noise_snr_db")?;
        }
        if let Some(r) = &self.motor_snr_db {
            r.validate("motor_snr_db")?;
        }
        Ok(())
    }
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            pitch_semitones: Range { lo: -2.0, hi: 2.0 },
            gain_db: Range { lo: -6.0, hi: 6.0 },
            noise_snr_db: Some(Range { lo: 15.0, hi: 40.0 }),
            motor_snr_db: Some(Range { lo: 5.0, hi: 20.0 }),
            motor_noise_bank: Vec::new(),
            seed: 0,
        }
    }
}

/// Augmentation with its motor-noise bank loaded at the working rate.
#[derive(Debug, Clone)]
pub struct Augmenter {
    params: AugmentParams,
    bank: Vec<Waveform>,
}

impl Augmenter {
    pub fn new(params: AugmentParams) -> Result<Self> {
        params.validate()?;
        let bank = params
            .motor_noise_bank
            .iter()
            .map(|p| resample(&read_wav(p)?, WORKING_RATE))
            .collect::<Result<Vec<_>>>()?;
        Ok(Augmenter { params, bank })
    }

    pub fn with_bank(params: AugmentParams, bank: Vec<Waveform>) -> Result<Self> {
        params.validate()?;
        for b in &bank {
            b.require_rate(WORKING_RATE)?;
        }
        Ok(Augmenter { params, bank })
    }

    pub fn params(&self) -> &AugmentParams {
        &self.params
    }

    /// Pitch shift, gain, white noise, motor noise, each with its own draw.
    /// Output length equals input length.
    pub fn augment(&self, w: &Waveform, rng: &mut impl Rng) -> Result<Waveform> {
        let p = &self.params;
        let semitones = p.pitch_semitones.draw(rng);
        let gain_db = p.gain_db.draw(rng);
        let noise_snr = p.noise_snr_db.map(|r| r.draw(rng));
        let motor_snr = p.motor_snr_db.map(|r| r.draw(rng));
        let motor_pick: u64 = rng.random();
        let motor_offset: u64 = rng.random();

        let mut x = w.samples().to_vec();
        if semitones != 0.0 {
            // resample by 1/factor and read back at the original rate
            let factor = 2f64.powf(semitones / 12.0);
            x = resample_by_ratio(&x, 1.0 / factor, x.len());
        }
        if gain_db != 0.0 {
            let g = 10f64.powf(gain_db / 20.0);
            x.iter_mut().for_each(|s| *s *= g);
        }
        let signal_rms = rms(&Waveform::new(x.clone(), w.sample_rate())?).unwrap_or(0.0);

        if let Some(snr) = noise_snr.filter(|s| s.is_finite()) {
            if signal_rms > 0.0 {
                let std = signal_rms / 10f64.powf(snr / 20.0);
                let normal = Normal::new(0.0, std).expect("finite std");
                x.iter_mut().for_each(|s| *s += normal.sample(rng));
            }
        }
        if let Some(snr) = motor_snr.filter(|s| s.is_finite()) {
            if self.bank.is_empty() {
                log::warn!("motor-noise injection drawn but the noise bank is empty; skipping");
            } else if signal_rms > 0.0 {
                let clip = &self.bank[(motor_pick % self.bank.len() as u64) as usize];
                if let Ok(clip_rms) = rms(clip) {
                    if clip_rms > 0.0 {
                        let scale = signal_rms / 10f64.powf(snr / 20.0) / clip_rms;
                        let c = clip.samples();
                        let off = (motor_offset % c.len() as u64) as usize;
                        for (i, s) in x.iter_mut().enumerate() {
                            *s += scale * c[(off + i) % c.len()];
                        }
                    }
                }
            }
        }
        Waveform::new(x, w.sample_rate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn clip() -> Waveform {
        Waveform::new(
            (0..12_800)
                .map(|i| 0.3 * (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn identity_parameters_are_identity() {
        let a = Augmenter::new(AugmentParams::identity(1)).unwrap();
        let w = clip();
        let out = a.augment(&w, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let motor = Waveform::new(
            (0..4000)
                .map(|i| ((i % 37) as f64 - 18.0) / 100.0)
                .collect(),
            16_000,
        )
        .unwrap();
        let a = Augmenter::with_bank(AugmentParams::default(), vec![motor]).unwrap();
        let w = clip();
        let x = a.augment(&w, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let y = a.augment(&w, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(x.len(), w.len());
        let bx: Vec<u64> = x.samples().iter().map(|v| v.to_bits()).collect();
        let by: Vec<u64> = y.samples().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bx, by);
        assert_ne!(x, w);
    }

    #[test]
    fn doubling_gain_doubles_rms() {
        let mut p = AugmentParams::identity(0);
        p.gain_db = Range::fixed(20.0 * 2f64.log10());
        let a = Augmenter::new(p).unwrap();
        let w = clip();
        let out = a.augment(&w, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ratio = rms(&out).unwrap() / rms(&w).unwrap();
        assert!((ratio - 2.0).abs() < 1e-6 * 2.0);
    }

    #[test]
    fn empty_bank_skips_motor_step() {
        let mut p = AugmentParams::identity(0);
        p.motor_snr_db = Some(Range::fixed(10.0));
        let a = Augmenter::new(p).unwrap();
        let w = clip();
        assert_eq!(a.augment(&w, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), w);
    }

    #[test]
    fn pitch_shift_preserves_length() {
        for semis in [-2.0, 2.0] {
            let mut p = AugmentParams::identity(0);
            p.pitch_semitones = Range::fixed(semis);
            let out = Augmenter::new(p)
                .unwrap()
                .augment(&clip(), &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
            assert_eq!(out.len(), clip().len());
        }
    }

    #[test]
    fn noise_snr_is_honored() {
        let mut p = AugmentParams::identity(0);
        p.noise_snr_db = Some(Range::fixed(20.0));
        let w = clip();
        let out = Augmenter::new(p)
            .unwrap()
            .augment(&w, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let noise: Vec<f64> = out
            .samples()
            .iter()
            .zip(w.samples())
            .map(|(a, b)| a - b)
            .collect();
        let snr = 20.0
            * (rms(&w).unwrap() / rms(&Waveform::new(noise, 16_000).unwrap()).unwrap()).log10();
        assert!((snr - 20.0).abs() < 0.5, "{snr}");
    }

    #[test]
    fn bad_range_rejected() {
        let mut p = AugmentParams::identity(0);
        p.gain_db = Range { lo: 3.0, hi: -3.0 };
        assert!(Augmenter::new(p).is_err());
    }
}
