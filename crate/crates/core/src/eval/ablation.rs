use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, WORKING_RATE};
use crate::error::{Error, Result};
use crate::features::mel::{hz_to_mel, mel_to_hz, F_MAX, F_MIN, N_MELS};
use crate::features::mel_spectrogram;
use crate::model::encoders::encode_audio_builtin;
use crate::model::{evaluate, train, EmbeddingBundle, Example, FusionConfig, Slot, TrainConfig};

/// An audio window with its class and split.
#[derive(Debug, Clone)]
pub struct LabeledWindow {
    pub audio: Waveform,
    pub label: usize,
    pub train: bool,
}

/// Supplies windows of a requested duration.
pub trait AblationSource: Sync {
    fn windows(&self, duration_s: f64) -> Result<Vec<LabeledWindow>>;
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub durations: Vec<f64>,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    /// Run duration points on the rayon pool.
    pub parallel: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            durations: (1..=10).map(|i| i as f64 / 10.0).collect(),
            fusion: FusionConfig {
                d_model: 32,
                n_layers: 1,
                n_heads: 2,
                mlp_hidden: 64,
                slots: vec![Slot::AudioSpectral],
                ..FusionConfig::default()
            },
            train: TrainConfig {
                max_epochs: 30,
                learning_rate: 1e-3,
                early_stop_patience: 8,
                ..TrainConfig::default()
            },
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub duration_s: f64,
    /// Sample accuracy on the held-out windows.
    pub accuracy: f64,
    pub n_samples: usize,
    pub seed: u64,
}

fn embed(w: &LabeledWindow) -> Result<Example> {
    let mel = mel_spectrogram(&w.audio)?;
    Ok(Example {
        bundle: EmbeddingBundle::default().with(Slot::AudioSpectral, encode_audio_builtin(&mel)),
        label: w.label,
    })
}

/// Z-score every embedding dimension with statistics of `train`.
fn standardize(train: &mut [Example], val: &mut [Example]) {
    let Some(dim) = train
        .first()
        .and_then(|e| e.bundle.get(Slot::AudioSpectral))
        .map(<[f32]>::len)
    else {
        return;
    };
    let n = train.len() as f64;
    let mut mean = vec![0.0f64; dim];
    let mut var = vec![0.0f64; dim];
    let rows = |ex: &[Example]| -> Vec<Vec<f64>> {
        ex.iter()
            .map(|e| {
                e.bundle
                    .get(Slot::AudioSpectral)
                    .map(|v| v.iter().map(|&x| x as f64).collect())
                    .unwrap_or_default()
            })
            .collect()
    };
    let tr = rows(train);
    for r in &tr {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    for r in &tr {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(r) {
            *v += (x - m).powi(2) / n;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt().max(1e-6)).collect();
    for e in train.iter_mut().chain(val.iter_mut()) {
        if let Some(v) = e.bundle.get(Slot::AudioSpectral) {
            let z = v
                .iter()
                .zip(mean.iter().zip(&std))
                .map(|(&x, (m, s))| ((x as f64 - m) / s) as f32)
                .collect();
            e.bundle.set(Slot::AudioSpectral, z);
        }
    }
}

/// Keep `counts[split][class]` windows of each kind, chosen by a seeded shuffle.
fn equalize(
    mut windows: Vec<LabeledWindow>,
    counts: &[[usize; 4]; 2],
    seed: u64,
) -> Vec<LabeledWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    windows.shuffle(&mut rng);
    let mut taken = [[0usize; 4]; 2];
    windows
        .into_iter()
        .filter(|w| {
            let s = usize::from(!w.train);
            if taken[s][w.label] < counts[s][w.label] {
                taken[s][w.label] += 1;
                true
            } else {
                false
            }
        })
        .collect()
}

fn tally(windows: &[LabeledWindow]) -> Result<[[usize; 4]; 2]> {
    let mut c = [[0usize; 4]; 2];
    for w in windows {
        if w.label >= 4 {
            return Err(Error::LabelOutOfRange(w.label));
        }
        c[usize::from(!w.train)][w.label] += 1;
    }
    Ok(c)
}

/// Train and evaluate once per duration with an equal per-class sample
/// budget (the minimum over durations). Embeddings are standardized with
/// training-split statistics before training.
pub fn window_ablation(
    source: &dyn AblationSource,
    cfg: &AblationConfig,
) -> Result<Vec<AblationPoint>> {
    if cfg.durations.is_empty() {
        return Err(Error::param("durations", "empty"));
    }
    let mut sets = Vec::with_capacity(cfg.durations.len());
    for &d in &cfg.durations {
        let w = source.windows(d)?;
        let c = tally(&w)?;
        if c[0].iter().sum::<usize>() == 0 || c[1].iter().sum::<usize>() == 0 {
            return Err(Error::ZeroSamples(d));
        }
        sets.push(w);
    }
    let tallies: Vec<[[usize; 4]; 2]> = sets.iter().map(|w| tally(w)).collect::<Result<_>>()?;
    let mut budget = tallies[0];
    for t in &tallies[1..] {
        for s in 0..2 {
            for c in 0..4 {
                budget[s][c] = budget[s][c].min(t[s][c]);
            }
        }
    }
    let seed = cfg.train.seed;
    let run = |(d, windows): (f64, Vec<LabeledWindow>)| -> Result<AblationPoint> {
        let kept = equalize(windows, &budget, seed);
        let n_samples = kept.len();
        let mut tr = Vec::new();
        let mut va = Vec::new();
        for w in &kept {
            let ex = embed(w)?;
            if w.train {
                tr.push(ex);
            } else {
                va.push(ex);
            }
        }
        standardize(&mut tr, &mut va);
        let out = train(&tr, &va, &cfg.fusion, &cfg.train)?;
        let accuracy = evaluate(&out.best, &va)?.report.accuracy;
        log::info!("ablation {d:.2} s: accuracy {accuracy:.4} on {n_samples} windows");
        Ok(AblationPoint {
            duration_s: d,
            accuracy,
            n_samples,
            seed,
        })
    };
    let jobs: Vec<(f64, Vec<LabeledWindow>)> = cfg.durations.iter().copied().zip(sets).collect();
    if cfg.parallel {
        jobs.into_par_iter().map(run).collect()
    } else {
        jobs.into_iter().map(run).collect()
    }
}

pub fn ablation_csv(points: &[AblationPoint]) -> String {
    let mut s = String::from("duration_s,accuracy,n_samples,seed\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            p.duration_s, p.accuracy, p.n_samples, p.seed
        );
    }
    s
}

/// Plot-ready document holding the measured curve and, optionally, the
/// reference curve.
pub fn ablation_json(
    points: &[AblationPoint],
    reference: Option<&ReferenceCurve>,
) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        metric: &'static str,
        points: &'a [AblationPoint],
        reference: Option<&'a ReferenceCurve>,
    }
    Ok(serde_json::to_string_pretty(&Doc {
        metric: "accuracy",
        points,
        reference,
    })? + "\n")
}

/// Parse `start:stop:step` or a comma-separated list of seconds.
pub fn parse_durations(spec: &str) -> Result<Vec<f64>> {
    let bad = |r: &str| Error::param("durations", format!("`{spec}`: {r}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let out: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step"));
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if out.is_empty() || out.iter().any(|&d| !(d > 0.0)) {
        return Err(bad("durations must be positive"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub duration_s: f64,
    pub accuracy_min: f64,
    pub accuracy_max: f64,
}

/// Published window-length curve, for chart comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurve {
    pub description: String,
    pub points: Vec<ReferencePoint>,
}

impl ReferenceCurve {
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!(
            "../../fixtures/window_ablation_reference.json"
        ))
        .expect("bundled reference curve")
    }
}

pub fn load_reference_curve(path: impl AsRef<Path>) -> Result<ReferenceCurve> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).at(path))
}

/// Four classes defined by which pair of four tones alternate in a 0.6 s
/// cycle: tone, gap, tone, gap (0.2 s / 0.1 s each). Any single tone occurs
/// in two classes, so short windows are ambiguous while windows covering a
/// full cycle are not.
#[derive(Debug, Clone)]
pub struct SyntheticPatternSource {
    pub trials_per_class: usize,
    /// Of those, how many go to the evaluation split.
    pub val_trials_per_class: usize,
    pub trial_seconds: f64,
    /// Window start spacing.
    pub stride_s: f64,
    pub noise_rms: f64,
    pub seed: u64,
}

impl Default for SyntheticPatternSource {
    fn default() -> Self {
        SyntheticPatternSource {
            trials_per_class: 3,
            val_trials_per_class: 1,
            trial_seconds: 6.0,
            stride_s: 0.1,
            noise_rms: 0.01,
            seed: 7,
        }
    }
}

pub const PATTERN_PERIOD_S: f64 = 0.6;
const CLASS_TONES: [(usize, usize); 4] = [(0, 1), (2, 3), (0, 2), (1, 3)];

impl SyntheticPatternSource {
    /// Tone frequencies at mel-band centers whose indices differ modulo 16.
    pub fn tone_frequencies() -> [f64; 4] {
        let lo = hz_to_mel(F_MIN);
        let hi = hz_to_mel(F_MAX);
        [18usize, 38, 58, 78]
            .map(|m| mel_to_hz(lo + (hi - lo) * (m + 1) as f64 / (N_MELS + 1) as f64))
    }

    pub fn trial(&self, class: usize, index: usize) -> Waveform {
        let rate = WORKING_RATE as f64;
        let n = (self.trial_seconds * rate).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((class as u64) << 32) ^ index as u64);
        let freqs = Self::tone_frequencies();
        let (a, b) = CLASS_TONES[class];
        let phase0 = rng.random_range(0.0..PATTERN_PERIOD_S);
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let ph = (t + phase0) % PATTERN_PERIOD_S;
                let tone = if ph < 0.2 {
                    Some(freqs[a])
                } else if (0.3..0.5).contains(&ph) {
                    Some(freqs[b])
                } else {
                    None
                };
                let s = tone.map_or(0.0, |f| 0.3 * (2.0 * PI * f * t).sin());
                s + self.noise_rms * rng.random_range(-1.732..1.732)
            })
            .collect();
        Waveform::new(samples, WORKING_RATE).expect("finite synthetic samples")
    }
}

impl AblationSource for SyntheticPatternSource {
    fn windows(&self, duration_s: f64) -> Result<Vec<LabeledWindow>> {
        if !(duration_s > 0.0) || duration_s > self.trial_seconds {
            return Err(Error::ZeroSamples(duration_s));
        }
        let n_win = ((self.trial_seconds - duration_s) / self.stride_s + 1e-9).floor() as usize + 1;
        let mut out = Vec::new();
        for class in 0..4 {
            for idx in 0..self.trials_per_class {
                let w = self.trial(class, idx);
                let train = idx >= self.val_trials_per_class;
                for k in 0..n_win {
                    out.push(LabeledWindow {
                        audio: w.slice_seconds(k as f64 * self.stride_s, duration_s),
                        label: class,
                        train,
                    });
                }
            }
        }
        Ok(out)
    }
}
