//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use contactsense::audio::{read_wav, write_wav, Envelope, Waveform, WORKING_RATE};
use contactsense::dataset::tensor::{decode_tensor, encode_tensor};
use contactsense::dataset::{Manifest, Split, TrialMeta};
use contactsense::denoise::{
    build_noise_profile, gate_mask, spectral_gate, synthetic_embodiment_noise, GateParams,
    NoiseProfile,
};
use contactsense::eval::{binary_collapse, binary_index, confusion, confusion_n, metrics};
use contactsense::eval::{window_ablation, AblationConfig, SyntheticPatternSource};
use contactsense::features::mel::{FLOOR_DB, F_MAX, F_MIN, N_FRAMES, N_MELS};
use contactsense::features::mel_spectrogram;
use contactsense::inference::{
    classify_stream, mean_latency_ms, StreamConfig, Timeline, WindowClassifier,
};
use contactsense::model::{
    cross_entropy, train, Checkpoint, CheckpointMeta, DropoutKey, EmbeddingBundle, EmbeddingStore,
    Example, FusionConfig, FusionModel, Slot, TrainConfig,
};
use contactsense::segmentation::{
    classify_samples, compute_thresholds, extract_segments, segment_envelope, SegmentDocument,
    SegmentationParams,
};
use contactsense::stft::Stft;
use contactsense::workspace::Workspace;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!(
            "{what} took {:.1} s, limit {limit_s} s",
            elapsed.as_secs_f64()
        )
    })
}

// ---------------------------------------------------------------- segmentation

/// Envelope with a noise floor and a few bursts of random height and length.
fn random_envelope(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(50..800);
    let floor = rng.random_range(0.01..0.1);
    let mut v: Vec<f64> = (0..n).map(|_| floor * rng.random_range(0.2..1.0)).collect();
    for _ in 0..rng.random_range(0..8) {
        let len = rng.random_range(1..120).min(n);
        let at = rng.random_range(0..=n - len);
        let amp = rng.random_range(0.05..1.0);
        for x in &mut v[at..at + len] {
            *x = amp * rng.random_range(0.3..1.0);
        }
    }
    v
}

/// A duration that is either an exact frame multiple or well away from one.
fn frame_duration(rng: &mut ChaCha8Rng, hop: f64, max_frames: usize) -> f64 {
    let k = rng.random_range(0..=max_frames) as f64;
    if rng.random_bool(0.3) {
        k * hop
    } else {
        (k + rng.random_range(0.05..0.95)) * hop
    }
}

/// Pairwise merge of candidate runs until no two are within `gamma`, then
/// drop anything shorter than `delta`.
fn reference_segments(mask: &[bool], hop: f64, gamma: f64, delta: f64) -> Vec<(usize, usize)> {
    let mut iv: Vec<(usize, usize)> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(k, _)| (k, k + 1))
        .collect();
    loop {
        let mut hit = None;
        'scan: for i in 0..iv.len() {
            for j in 0..iv.len() {
                if i == j || iv[i].0 > iv[j].0 {
                    continue;
                }
                let gap = iv[j].0 as f64 - iv[i].1 as f64;
                if gap * hop <= gamma + 1e-9 {
                    hit = Some((i, j));
                    break 'scan;
                }
            }
        }
        match hit {
            Some((i, j)) => {
                iv[i] = (iv[i].0, iv[i].1.max(iv[j].1));
                iv.remove(j);
            }
            None => break,
        }
    }
    iv.sort();
    iv.retain(|&(s, e)| (e - s) as f64 * hop >= delta - 1e-9);
    iv
}

fn random_params(rng: &mut ChaCha8Rng, hop: f64) -> SegmentationParams {
    SegmentationParams {
        alpha_offset: rng.random_range(0.0..1.0),
        delta_min_seconds: frame_duration(rng, hop, 60).max(hop * 0.5),
        gamma_squeeze_seconds: frame_duration(rng, hop, 40),
        ..SegmentationParams::default()
    }
}

fn c1_oracle_equivalence() -> Check {
    let t = Instant::now();
    let hop = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let env = Envelope::new(random_envelope(&mut rng), hop);
        let p = random_params(&mut rng, hop);
        let th = compute_thresholds(&env, &p).map_err(|e| e.to_string())?;
        let mask = classify_samples(&env, &th);
        let got: Vec<(f64, f64)> = extract_segments(&mask, hop, &p)
            .iter()
            .map(|s| (s.start_seconds, s.end_seconds))
            .collect();
        let want: Vec<(f64, f64)> =
            reference_segments(&mask, hop, p.gamma_squeeze_seconds, p.delta_min_seconds)
                .into_iter()
                .map(|(s, e)| (s as f64 * hop, e as f64 * hop))
                .collect();
        if got != want {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    within(t.elapsed(), 10.0, "oracle comparison")?;
    Ok(format!(
        "0 mismatches over 1000 envelopes in {:.2} s",
        t.elapsed().as_secs_f64()
    ))
}

fn c2_threshold_formula() -> Check {
    let ramp: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let p = SegmentationParams {
        alpha_offset: 0.5,
        ..SegmentationParams::default()
    };
    let th = compute_thresholds(&Envelope::new(ramp, 0.01), &p).map_err(|e| e.to_string())?;
    let got = (th.f_noise, th.f_signal, th.t_contact);
    ensure(got == (0.10, 0.90, 0.50), || format!("ramp gave {got:?}"))?;

    let flat = Envelope::new(vec![0.25; 500], 0.01);
    let seg =
        segment_envelope(flat, 5.0, &SegmentationParams::default()).map_err(|e| e.to_string())?;
    ensure(seg.contact.is_empty(), || {
        format!("constant envelope gave {} contacts", seg.contact.len())
    })?;
    Ok(format!(
        "ramp (f_noise, f_signal, t_contact) = {got:?}; constant envelope: 0 contacts"
    ))
}

fn c3_monotone_and_scale() -> Check {
    let hop = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mono, mut scale) = (0, 0);
    let key = |s: &contactsense::segmentation::TrialSegmentation| -> Vec<(u64, u64)> {
        s.contact
            .iter()
            .chain(&s.ambient)
            .map(|c| (c.start_seconds.to_bits(), c.end_seconds.to_bits()))
            .collect()
    };
    for _ in 0..200 {
        let values = random_envelope(&mut rng);
        let duration = values.len() as f64 * hop;
        let base = random_params(&mut rng, hop);
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let p = SegmentationParams {
                alpha_offset: i as f64 / 20.0,
                ..base
            };
            let s = segment_envelope(Envelope::new(values.clone(), hop), duration, &p)
                .map_err(|e| e.to_string())?;
            let cov: f64 = s.contact.iter().map(|c| c.duration()).sum();
            if cov > prev + 1e-12 {
                mono += 1;
            }
            prev = cov;
        }
        let env = Envelope::new(values, hop);
        let one = segment_envelope(env.clone(), duration, &base).map_err(|e| e.to_string())?;
        for a in [0.1, 10.0] {
            let s = segment_envelope(env.scaled(a), duration, &base).map_err(|e| e.to_string())?;
            if key(&s) != key(&one) {
                scale += 1;
            }
        }
    }
    ensure(mono == 0 && scale == 0, || {
        format!("{mono} monotonicity and {scale} scale violations")
    })?;
    Ok("0 violations over 200 envelopes (21 alphas, scales 0.1/1/10)".into())
}

// ---------------------------------------------------------------- denoise

fn white(seconds: f64, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * WORKING_RATE as f64) as usize;
    (0..n)
        .map(|_| std * rng.random_range(-1.732..1.732))
        .collect()
}

fn tone(freq: f64, amp: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / WORKING_RATE as f64).sin())
        .collect()
}

/// Energy of `x` inside and outside `[lo, hi]` Hz.
fn band_energy(x: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let n = x.len();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let (mut inside, mut outside) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let f = k as f64 * WORKING_RATE as f64 / n as f64;
        if (lo..=hi).contains(&f) {
            inside += c.norm_sqr();
        } else {
            outside += c.norm_sqr();
        }
    }
    (inside, outside)
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn c4_spectral_gating() -> Check {
    let e = |e: contactsense::Error| e.to_string();
    let profile = NoiseProfile::bundled("probe").ok_or("bundled probe profile missing")?;
    let x = Waveform::new(
        white(2.0, 0.1, 11)
            .iter()
            .zip(tone(440.0, 0.2, 32000))
            .map(|(a, b)| a + b)
            .collect(),
        WORKING_RATE,
    )
    .map_err(e)?;
    let id = spectral_gate(
        &x,
        &profile,
        &GateParams {
            prop_decrease: 0.0,
            ..GateParams::default()
        },
    )
    .map_err(e)?;
    let num: f64 = x
        .samples()
        .iter()
        .zip(id.samples())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let den: f64 = x.samples().iter().map(|a| a * a).sum();
    let rel = (num / den).sqrt();
    ensure(rel < 1e-6, || format!("identity relative L2 {rel:e}"))?;

    let reference = Waveform::new(white(3.0, 0.02, 21), WORKING_RATE).map_err(e)?;
    let noise_profile = build_noise_profile(&reference, &profile.stft_params()).map_err(e)?;
    let sig: Vec<f64> = white(2.0, 0.02, 22)
        .iter()
        .zip(tone(1000.0, 0.3, 32000))
        .map(|(a, b)| a + b)
        .collect();
    let noisy = Waveform::new(sig, WORKING_RATE).map_err(e)?;
    let clean = spectral_gate(&noisy, &noise_profile, &GateParams::default()).map_err(e)?;
    let (in_band, in_out) = band_energy(noisy.samples(), 950.0, 1050.0);
    let (out_band, out_out) = band_energy(clean.samples(), 950.0, 1050.0);
    let (_, in_far) = band_energy(noisy.samples(), 900.0, 1100.0);
    let (_, out_far) = band_energy(clean.samples(), 900.0, 1100.0);
    let band_change = db(out_band / in_band);
    let far_change = db(out_far / in_far);
    let _ = (in_out, out_out);
    ensure(band_change.abs() <= 1.0, || {
        format!("1 kHz band changed {band_change:.2} dB")
    })?;
    ensure(far_change <= -10.0, || {
        format!("out-of-band only {far_change:.2} dB")
    })?;

    let stft = Stft::from_params(&profile.stft_params()).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for i in 0..100 {
        let n = rng.random_range(4000..24000);
        let std = rng.random_range(0.001..0.5);
        let f = rng.random_range(100.0..7000.0);
        let amp = rng.random_range(0.0..0.5);
        let sig: Vec<f64> = white(n as f64 / WORKING_RATE as f64, std, 100 + i)
            .iter()
            .zip(tone(f, amp, n))
            .map(|(a, b)| a + b)
            .collect();
        let spec = stft.forward(&sig, stft.centered_frames(sig.len()));
        let pd = rng.random_range(0.0..1.0);
        let pd2 = pd + (1.0 - pd) * rng.random_range(0.0..1.0);
        let gp = |pd| GateParams {
            prop_decrease: pd,
            n_std_thresh: 1.5,
            ..GateParams::default()
        };
        let m1 = gate_mask(&spec, &profile, &gp(pd));
        let m2 = gate_mask(&spec, &profile, &gp(pd2));
        for (r1, r2) in m1.iter().zip(&m2) {
            for (&a, &b) in r1.iter().zip(r2) {
                let in_range = a >= 1.0 - pd - 1e-12 && a <= 1.0 + 1e-12;
                let monotone = b <= a + 1e-12;
                if !in_range || !monotone {
                    bad += 1;
                }
            }
        }
    }
    ensure(bad == 0, || format!("{bad} mask invariant violations"))?;
    Ok(format!(
        "identity rel L2 {rel:.1e}; 1 kHz band {band_change:+.2} dB; out-of-band {far_change:.1} dB; mask invariants hold on 100 inputs"
    ))
}

// ---------------------------------------------------------------- mel

fn slaney_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if f < min_log_hz {
        f / f_sp
    } else {
        min_log_mel + (f / min_log_hz).ln() / logstep
    }
}

fn slaney_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if m < min_log_mel {
        m * f_sp
    } else {
        min_log_hz * ((m - min_log_mel) * logstep).exp()
    }
}

fn c5_mel_pipeline() -> Check {
    let e = |e: contactsense::Error| e.to_string();
    let n = (0.8 * WORKING_RATE as f64) as usize;
    let w = Waveform::new(tone(1000.0, 0.5, n), WORKING_RATE).map_err(e)?;
    let mel = mel_spectrogram(&w).map_err(e)?;
    ensure(mel.shape() == (128, 1024), || {
        format!("shape {:?}", mel.shape())
    })?;
    ensure((N_MELS, N_FRAMES) == (128, 1024), || "constants".into())?;
    let real = mel.real_frames();
    let energy: Vec<f64> = (0..N_MELS)
        .map(|m| (0..real).map(|f| mel.get(m, f) as f64).sum::<f64>() / real as f64)
        .collect();
    let got = (0..N_MELS)
        .max_by(|&a, &b| energy[a].total_cmp(&energy[b]))
        .unwrap_or(0);
    let (lo, hi) = (slaney_mel(F_MIN), slaney_mel(F_MAX));
    let want = (0..N_MELS)
        .min_by(|&a, &b| {
            let c = |m: usize| {
                (slaney_hz(lo + (hi - lo) * (m + 1) as f64 / (N_MELS + 1) as f64) - 1000.0).abs()
            };
            c(a).total_cmp(&c(b))
        })
        .unwrap_or(0);
    ensure(got == want, || {
        format!("1 kHz peak in band {got}, oracle {want}")
    })?;

    let silent = mel_spectrogram(&Waveform::silence(n, WORKING_RATE)).map_err(e)?;
    ensure(silent.values.iter().all(|&v| v == FLOOR_DB), || {
        "silence is not a uniform floor".into()
    })?;
    Ok(format!("shape 128x1024; 1 kHz peak at band {got} (oracle {want}); silence = {FLOOR_DB} dB everywhere"))
}

// ---------------------------------------------------------------- model

fn random_bundle(seed: u64) -> EmbeddingBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = EmbeddingBundle::default();
    for s in Slot::ALL {
        b.set(
            s,
            (0..s.dim())
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect(),
        );
    }
    b
}

fn c6_gradient_gate() -> Check {
    let t = Instant::now();
    let cfg = FusionConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        mlp_hidden: 8,
        dropout_rate: 0.1,
        ..FusionConfig::default()
    };
    let m = FusionModel::new(cfg, 3).map_err(|e| e.to_string())?;
    let batch = vec![random_bundle(10), random_bundle(11)];
    let labels = [1, 3];
    let key = Some(DropoutKey {
        seed: 5,
        epoch: 0,
        step: 0,
    });
    let base = m.params().to_vec();
    let (_, grad) = m
        .loss_and_grad_at(&base, &batch, &labels, key)
        .map_err(|e| e.to_string())?;
    let eps = 1e-4;
    let n = base.len();
    let chunk = 256;
    let (worst, failed) = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut p = base.clone();
            let mut worst: f64 = 0.0;
            let mut failed = 0usize;
            for i in c * chunk..((c + 1) * chunk).min(n) {
                p[i] = base[i] + eps;
                let lp = m.loss_at(&p, &batch, &labels, key).expect("loss");
                p[i] = base[i] - eps;
                let lm = m.loss_at(&p, &batch, &labels, key).expect("loss");
                p[i] = base[i];
                let num = (lp - lm) / (2.0 * eps);
                let err = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-5);
                worst = worst.max(err);
                if err >= 1e-4 {
                    failed += 1;
                }
            }
            (worst, failed)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
    ensure(failed == 0, || {
        format!("{failed} of {n} parameters exceed 1e-4 (worst {worst:.2e})")
    })?;

    let (ce, _) = cross_entropy(&[[0.0; 4]], &[2]).map_err(|e| e.to_string())?;
    let ln4 = 4f64.ln();
    ensure((ce - ln4).abs() < 1e-9, || {
        format!("uniform cross-entropy {ce} vs ln 4 {ln4}")
    })?;
    within(t.elapsed(), 60.0, "gradient check")?;
    Ok(format!(
        "{n} parameters at step {eps:e}, worst relative error {worst:.2e}; uniform CE - ln 4 = {:.1e}; {:.1} s",
        ce - ln4,
        t.elapsed().as_secs_f64()
    ))
}

fn clusters(per_class: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..per_class * 4)
        .map(|i| {
            let label = i % 4;
            let v = (0..Slot::AudioSpectral.dim())
                .map(|k| f32::from(k % 4 == label) + rng.random_range(-0.3f32..0.3))
                .collect();
            Example {
                bundle: EmbeddingBundle::default().with(Slot::AudioSpectral, v),
                label,
            }
        })
        .collect()
}

fn c7_training_sanity() -> Check {
    let t = Instant::now();
    let data = clusters(200, 17);
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (i, ex) in data.into_iter().enumerate() {
        if i % 5 == 0 {
            va.push(ex);
        } else {
            tr.push(ex);
        }
    }
    let fc = FusionConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        mlp_hidden: 16,
        slots: vec![Slot::AudioSpectral],
        ..FusionConfig::default()
    };
    let tc = TrainConfig {
        batch_size: 4,
        max_epochs: 50,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train(&tr, &va, &fc, &tc).map_err(|e| e.to_string())?;
    let b = train(&tr, &va, &fc, &tc).map_err(|e| e.to_string())?;
    ensure(a.best_val_f1 >= 0.95, || {
        format!("best val macro-F1 {}", a.best_val_f1)
    })?;
    let bits = |h: &[contactsense::model::EpochMetrics]| -> Vec<[u64; 3]> {
        h.iter()
            .map(|m| {
                [
                    m.train_loss.to_bits(),
                    m.val_loss.to_bits(),
                    m.val_f1.to_bits(),
                ]
            })
            .collect()
    };
    ensure(bits(&a.history) == bits(&b.history), || {
        "loss curves differ".into()
    })?;
    ensure(a.best.params() == b.best.params(), || {
        "parameters differ".into()
    })?;
    within(t.elapsed(), 300.0, "training twice")?;
    Ok(format!(
        "val macro-F1 {:.3} at epoch {} of {}; identical curves across runs; {:.1} s",
        a.best_val_f1,
        a.best_epoch,
        a.history.len(),
        t.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- metrics

fn c8_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 200_000;
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let r = metrics(&confusion(&preds, &labels).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure((r.macro_f1 - 0.25).abs() <= 0.01, || {
        format!("random macro-F1 {}", r.macro_f1)
    })?;

    let mut bad = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..500);
        let l: Vec<usize> = (0..k).map(|_| rng.random_range(0..4)).collect();
        let p: Vec<usize> = (0..k).map(|_| rng.random_range(0..4)).collect();
        let collapsed = binary_collapse(&confusion(&p, &l).map_err(|e| e.to_string())?);
        let bl: Vec<usize> = l.iter().map(|&c| binary_index(c)).collect();
        let bp: Vec<usize> = p.iter().map(|&c| binary_index(c)).collect();
        let direct = confusion_n(&bp, &bl, 2).map_err(|e| e.to_string())?;
        if collapsed != direct {
            bad += 1;
        }
    }
    ensure(bad == 0, || format!("{bad} binary-collapse mismatches"))?;
    Ok(format!(
        "random-uniform macro-F1 {:.4} over {n} balanced samples; binary collapse identical on 100 matrices",
        r.macro_f1
    ))
}

// ---------------------------------------------------------------- streaming

fn c9_streaming() -> Check {
    let e = |e: contactsense::Error| e.to_string();
    let cfg = FusionConfig {
        slots: vec![Slot::AudioSpectral, Slot::Image],
        ..FusionConfig::default()
    };
    let ck = Checkpoint::new(
        FusionModel::new(cfg, 1).map_err(e)?,
        CheckpointMeta::default(),
    );
    let n = 10 * WORKING_RATE as usize;
    let sig: Vec<f64> = white(10.0, 0.05, 9)
        .iter()
        .zip(tone(2500.0, 0.2, n))
        .enumerate()
        .map(|(i, (a, b))| a + if (i / 24000) % 2 == 0 { b } else { 0.0 })
        .collect();
    let audio = Waveform::new(sig, WORKING_RATE).map_err(e)?;
    let classifier = || WindowClassifier::from_checkpoint(ck.clone(), StreamConfig::default());
    let one = classify_stream(classifier().map_err(e)?, &audio, 1).map_err(e)?;
    let bulk = classify_stream(classifier().map_err(e)?, &audio, n).map_err(e)?;
    ensure(one.len() == 19 && bulk.len() == 19, || {
        format!("{} and {} windows, want 19", one.len(), bulk.len())
    })?;
    let same = one.iter().zip(&bulk).all(|(a, b)| a.same_outputs(b));
    ensure(same, || "1-sample and bulk pushes disagree".into())?;
    let latency = mean_latency_ms(&bulk);
    ensure(latency < 500.0, || format!("mean latency {latency:.1} ms"))?;
    Ok(format!(
        "19 windows; 1-sample and bulk pushes identical; mean window time {latency:.2} ms"
    ))
}

// ---------------------------------------------------------------- ablation

fn c10_window_ablation() -> Check {
    let t = Instant::now();
    let cfg = AblationConfig {
        durations: vec![0.1, 0.8],
        parallel: true,
        ..AblationConfig::default()
    };
    let points =
        window_ablation(&SyntheticPatternSource::default(), &cfg).map_err(|e| e.to_string())?;
    let (short, long) = (points[0].accuracy, points[1].accuracy);
    ensure(long - short >= 0.15, || {
        format!("accuracy 0.8 s {long:.3} vs 0.1 s {short:.3}")
    })?;
    within(t.elapsed(), 900.0, "ablation")?;
    Ok(format!(
        "accuracy 0.1 s {short:.3}, 0.8 s {long:.3} (+{:.3}); {:.1} s",
        long - short,
        t.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- end to end

fn cli(ws: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_contactsense"))
        .arg("--workspace")
        .arg(ws)
        .arg("--quiet")
        .args(args)
        .env_remove("CONTACTSENSE_WORKSPACE")
        .env_remove("CONTACTSENSE_JOBS")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn same_bytes(path: &Path, rewritten: &[u8], what: &str) -> Result<(), String> {
    let orig = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure(orig == rewritten, || {
        format!("{what} {} does not round-trip", path.display())
    })
}

fn c11_end_to_end() -> Check {
    let e = |e: contactsense::Error| e.to_string();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let dirs = common::five_trials(&root.join("src"), true);
    let ws_root = root.join("ws");
    let ws = Workspace::new(&ws_root);
    cli(&ws_root, &["init"])?;
    let mut ingest = vec!["ingest".to_string()];
    ingest.extend(dirs.iter().map(|d| d.display().to_string()));
    cli(
        &ws_root,
        &ingest.iter().map(String::as_str).collect::<Vec<_>>(),
    )?;

    let reference = root.join("noise.wav");
    write_wav(
        &reference,
        &synthetic_embodiment_noise("probe", 3.0, WORKING_RATE, 5),
    )
    .map_err(e)?;
    cli(
        &ws_root,
        &[
            "profile",
            "--reference",
            reference.to_str().unwrap(),
            "--name",
            "bench",
        ],
    )?;
    cli(&ws_root, &["denoise", "--profile", "bench"])?;
    cli(&ws_root, &["segment"])?;
    cli(&ws_root, &["accept"])?;
    cli(&ws_root, &["dataset", "--name", "e2e"])?;
    let tiny = root.join("tiny.json");
    std::fs::write(
        &tiny,
        r#"{"fusion": {"d_model": 16, "n_layers": 1, "n_heads": 2, "mlp_hidden": 32}, "train": {"max_epochs": 5, "learning_rate": 0.001}}"#,
    )
    .map_err(|e| e.to_string())?;
    cli(
        &ws_root,
        &[
            "train",
            "--dataset",
            "e2e",
            "--config",
            tiny.to_str().unwrap(),
            "--seed",
            "3",
        ],
    )?;
    let report = cli(&ws_root, &["eval", "--dataset", "e2e"])?;
    ensure(report.contains("binary"), || {
        format!("eval output: {report}")
    })?;
    let lines = cli(
        &ws_root,
        &["infer", "--checkpoint", "e2e", "--trial", "leaf-a"],
    )?;
    let n_lines = lines.lines().count();
    ensure(n_lines == 15, || format!("infer printed {n_lines} lines"))?;

    let manifest_path = ws.datasets_dir().join("e2e/manifest.jsonl");
    let manifest = Manifest::load(&manifest_path).map_err(e)?;
    let leaked = manifest.leaked_trials();
    ensure(leaked.is_empty(), || format!("leaked trials {leaked:?}"))?;
    let mut splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for s in &manifest.samples {
        splits.entry(&s.trial_id).or_default().insert(s.split);
    }
    ensure(
        splits.len() == 5 && splits.values().all(|s| s.len() == 1),
        || format!("trial splits {splits:?}"),
    )?;

    let mut checked = 0;
    for id in ["leaf-a", "leaf-b", "twig-a", "twig-b", "trunk-a"] {
        let meta_path = ws.trial_dir(id).join("trial.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| e.to_string())?;
        let meta: TrialMeta = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let mut again = serde_json::to_string_pretty(&meta).map_err(|e| e.to_string())?;
        again.push('\n');
        same_bytes(&meta_path, again.as_bytes(), "trial metadata")?;

        let seg_path = ws.segments_path(id);
        let text = std::fs::read_to_string(&seg_path).map_err(|e| e.to_string())?;
        let doc = SegmentDocument::from_json(&text).map_err(e)?;
        same_bytes(
            &seg_path,
            doc.to_json().map_err(e)?.as_bytes(),
            "segment file",
        )?;

        let wav_path = ws.trial_dir(id).join("denoised.wav");
        let copy = root.join("copy.wav");
        write_wav(&copy, &read_wav(&wav_path).map_err(e)?).map_err(e)?;
        same_bytes(
            &wav_path,
            &std::fs::read(&copy).map_err(|e| e.to_string())?,
            "denoised audio",
        )?;
        checked += 3;
    }
    let profile_path = ws.profiles_dir().join("bench.json");
    let copy = root.join("profile.json");
    NoiseProfile::load(&profile_path)
        .map_err(e)?
        .save(&copy)
        .map_err(e)?;
    same_bytes(
        &profile_path,
        &std::fs::read(&copy).map_err(|e| e.to_string())?,
        "noise profile",
    )?;

    same_bytes(
        &manifest_path,
        manifest.to_jsonl().map_err(e)?.as_bytes(),
        "manifest",
    )?;

    let emb = ws.datasets_dir().join("e2e/embeddings");
    let emb_copy = root.join("embeddings");
    EmbeddingStore::load_dir(&emb)
        .map_err(e)?
        .save_dir(&emb_copy)
        .map_err(e)?;
    for f in std::fs::read_dir(&emb).map_err(|e| e.to_string())? {
        let f = f.map_err(|e| e.to_string())?.path();
        let name = f.file_name().unwrap();
        same_bytes(
            &f,
            &std::fs::read(emb_copy.join(name)).map_err(|e| e.to_string())?,
            "embeddings",
        )?;
        checked += 1;
    }

    let mels = ws.datasets_dir().join("e2e/mels");
    let mut tensors = 0;
    for f in std::fs::read_dir(&mels).map_err(|e| e.to_string())? {
        let f = f.map_err(|e| e.to_string())?.path();
        let bytes = std::fs::read(&f).map_err(|e| e.to_string())?;
        let (shape, data) = decode_tensor(&bytes).map_err(e)?;
        ensure(shape == [1, N_MELS, N_FRAMES], || {
            format!("mel tensor shape {shape:?}")
        })?;
        same_bytes(&f, &encode_tensor(&shape, &data).map_err(e)?, "mel tensor")?;
        tensors += 1;
    }

    let ckpt_path = ws.checkpoints_dir().join("e2e.ckpt");
    let bytes = std::fs::read(&ckpt_path).map_err(|e| e.to_string())?;
    let ck = Checkpoint::from_bytes(&bytes).map_err(e)?;
    same_bytes(&ckpt_path, &ck.to_bytes().map_err(e)?, "checkpoint")?;

    let tl_path = ws.reports_dir().join("infer/leaf-a/timeline.json");
    let tl = Timeline::load(&tl_path).map_err(e)?;
    same_bytes(
        &tl_path,
        serde_json::to_string_pretty(&tl)
            .map_err(|e| e.to_string())?
            .as_bytes(),
        "timeline",
    )?;
    checked += 5 + tensors;
    Ok(format!(
        "ingest, profile, denoise, segment, accept, dataset ({} samples, 0 leaked trials), train, eval, infer (15 windows); {checked} files round-trip byte-identically",
        manifest.samples.len()
    ))
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("segmentation oracle equivalence", c1_oracle_equivalence),
        ("threshold formula fidelity", c2_threshold_formula),
        (
            "segmentation monotonicity and scale equivariance",
            c3_monotone_and_scale,
        ),
        ("spectral gating", c4_spectral_gating),
        ("mel pipeline", c5_mel_pipeline),
        ("gradient gate", c6_gradient_gate),
        ("training sanity", c7_training_sanity),
        ("metrics", c8_metrics),
        ("streaming equivalence", c9_streaming),
        ("window-length ablation", c10_window_ablation),
        ("end-to-end pipeline", c11_end_to_end),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|p| name.contains(p.as_str()) || *p == id.to_string())
        {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
