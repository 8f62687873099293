//! Synthetic trials shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contactsense::audio::{write_wav, Waveform, WORKING_RATE};
use contactsense::dataset::{Embodiment, TrialMeta, FRAMES_DIR, TRIAL_AUDIO, TRIAL_META};
use contactsense::denoise::synthetic_embodiment_noise;
use contactsense::ContactClass;

pub const TRIAL_SECONDS: f64 = 8.0;
/// Contact intervals written into every synthetic trial.
pub const CONTACTS: [(f64, f64); 2] = [(1.5, 3.5), (5.0, 6.8)];
pub const AUDIO_START_NS: i64 = 1_700_000_000_000_000_000;
pub const FRAME_PERIOD_NS: i64 = 200_000_000;

/// Class-specific contact excitation at time `t`.
fn excitation(class: ContactClass, t: f64, rng: &mut ChaCha8Rng) -> f64 {
    match class {
        ContactClass::Leaf => {
            0.15 * ((TAU * 3100.0 * t).sin() + (TAU * 4300.0 * t).sin())
                + 0.05 * rng.random_range(-1.0..1.0)
        }
        ContactClass::Twig => 0.3 * (TAU * 1200.0 * t).sin() * (0.6 + 0.4 * (TAU * 7.0 * t).sin()),
        ContactClass::Trunk => 0.25 * (TAU * 250.0 * t).sin() + 0.12 * (TAU * 500.0 * t).sin(),
        ContactClass::Ambient => 0.0,
    }
}

/// Embodiment noise plus contact bursts with 10 ms ramps.
pub fn trial_audio(class: ContactClass, embodiment: Embodiment, seed: u64) -> Waveform {
    let noise = synthetic_embodiment_noise(embodiment.as_str(), TRIAL_SECONDS, WORKING_RATE, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let rate = WORKING_RATE as f64;
    let samples = noise
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let t = i as f64 / rate;
            let gain = CONTACTS
                .iter()
                .map(|&(a, b)| {
                    if t < a || t >= b {
                        0.0
                    } else {
                        ((t - a) / 0.01).min((b - t) / 0.01).min(1.0)
                    }
                })
                .fold(0.0, f64::max);
            n + gain * excitation(class, t, &mut rng)
        })
        .collect();
    Waveform::new(samples, WORKING_RATE).unwrap()
}

fn class_rgb(class: ContactClass) -> [u8; 3] {
    match class {
        ContactClass::Leaf => [40, 200, 40],
        ContactClass::Twig => [200, 140, 40],
        ContactClass::Trunk => [110, 70, 30],
        ContactClass::Ambient => [128, 128, 128],
    }
}

/// Write a trial directory: trial.wav, trial.json and (optionally) 5 fps
/// frames whose colour shows the class during contacts.
pub fn write_trial(
    root: &Path,
    id: &str,
    class: ContactClass,
    embodiment: Embodiment,
    seed: u64,
    frames: bool,
) -> PathBuf {
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).unwrap();
    write_wav(dir.join(TRIAL_AUDIO), &trial_audio(class, embodiment, seed)).unwrap();
    let meta = TrialMeta {
        embodiment,
        declared_class: class,
        meta: Default::default(),
        audio_start_ns: AUDIO_START_NS,
    };
    std::fs::write(
        dir.join(TRIAL_META),
        serde_json::to_string_pretty(&meta).unwrap(),
    )
    .unwrap();
    if frames {
        let fdir = dir.join(FRAMES_DIR);
        std::fs::create_dir_all(&fdir).unwrap();
        let n = (TRIAL_SECONDS * 1e9 / FRAME_PERIOD_NS as f64) as i64;
        for k in 0..n {
            let ts = AUDIO_START_NS + k * FRAME_PERIOD_NS;
            let t = (k * FRAME_PERIOD_NS) as f64 * 1e-9;
            let in_contact = CONTACTS.iter().any(|&(a, b)| a <= t && t < b);
            let c = if in_contact {
                class
            } else {
                ContactClass::Ambient
            };
            let img = image::RgbImage::from_pixel(64, 48, image::Rgb(class_rgb(c)));
            img.save(fdir.join(format!("{ts}.png"))).unwrap();
        }
    }
    dir
}

/// Five trials: two leaf, two twig, one trunk.
pub fn five_trials(root: &Path, frames: bool) -> Vec<PathBuf> {
    let plan = [
        ("leaf-a", ContactClass::Leaf, Embodiment::Probe),
        ("leaf-b", ContactClass::Leaf, Embodiment::Robot),
        ("twig-a", ContactClass::Twig, Embodiment::Probe),
        ("twig-b", ContactClass::Twig, Embodiment::Robot),
        ("trunk-a", ContactClass::Trunk, Embodiment::Probe),
    ];
    plan.iter()
        .enumerate()
        .map(|(i, &(id, c, e))| write_trial(root, id, c, e, 100 + i as u64, frames))
        .collect()
}
