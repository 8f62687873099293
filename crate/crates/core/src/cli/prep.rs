//! Ingest, denoise, segment, review-accept, featurize and dataset commands.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::Args;
use serde_json::json;

use contactsense::audio::{read_wav, write_wav};
use contactsense::dataset::{
    build_dataset, list_frames, load_working_audio, window_segments, AugmentSpec, DatasetParams,
    Embodiment, Split, SplitPolicy, TrialInput, TrialMeta, TrialRecording, FRAMES_DIR,
    MANIFEST_FILE, TRIAL_AUDIO, TRIAL_META,
};
use contactsense::denoise::{build_noise_profile, spectral_gate, GateParams, NoiseProfile};
use contactsense::features::{extract_features, write_feature_csv, AugmentParams, FeatureRow};
use contactsense::segmentation::{ReviewState, SegmentDocument};
use contactsense::service::{ReviewAction, ReviewSession};
use contactsense::stft::StftParams;
use contactsense::util::atomic_write;
use contactsense::workspace::segment_recording;
use contactsense::ContactClass;

use super::runlog::Unit;
use super::{Ctx, SegmentationArgs, TrialArgs};

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Trial directories (trial.wav, optional trial.json and frames/) or WAV files.
    #[arg(required = true)]
    pub sources: Vec<PathBuf>,
    /// Trial id; only with a single source (default: source name).
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub embodiment: Option<Embodiment>,
    /// Declared contact class of the trial.
    #[arg(long = "class")]
    pub declared_class: Option<ContactClass>,
    /// Epoch time of the first audio sample, in nanoseconds.
    #[arg(long)]
    pub audio_start_ns: Option<i64>,
}

fn source_id(src: &Path) -> Result<String> {
    let name = if src.is_dir() {
        src.file_name()
    } else {
        src.file_stem()
    };
    name.map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .with_context(|| format!("cannot derive a trial id from {}", src.display()))
}

fn read_meta(path: &Path) -> Result<Option<TrialMeta>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    Ok(Some(
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    ))
}

fn ingest_one(src: &Path, dest: &Path, a: &IngestArgs) -> Result<()> {
    let (wav, frames_dir, meta) = if src.is_dir() {
        (
            src.join(TRIAL_AUDIO),
            Some(src.join(FRAMES_DIR)),
            read_meta(&src.join(TRIAL_META))?,
        )
    } else {
        (src.to_path_buf(), None, None)
    };
    let embodiment = a
        .embodiment
        .or(meta.as_ref().map(|m| m.embodiment))
        .context("no trial.json in source; pass --embodiment")?;
    let declared_class = a
        .declared_class
        .or(meta.as_ref().map(|m| m.declared_class))
        .context("no trial.json in source; pass --class")?;
    let meta = TrialMeta {
        embodiment,
        declared_class,
        meta: meta.as_ref().map(|m| m.meta.clone()).unwrap_or_default(),
        audio_start_ns: a
            .audio_start_ns
            .or(meta.as_ref().map(|m| m.audio_start_ns))
            .unwrap_or(0),
    };
    let audio = read_wav(&wav)?;
    if audio.is_empty() {
        bail!("{} has no samples", wav.display());
    }
    let frames = match &frames_dir {
        Some(d) => list_frames(d)?,
        None => Vec::new(),
    };
    if dest.exists() {
        std::fs::remove_dir_all(dest).with_context(|| format!("clearing {}", dest.display()))?;
    }
    std::fs::create_dir_all(dest.join(FRAMES_DIR))?;
    std::fs::copy(&wav, dest.join(TRIAL_AUDIO))
        .with_context(|| format!("copying {}", wav.display()))?;
    for f in &frames {
        let name = f.path.file_name().context("frame without a name")?;
        std::fs::copy(&f.path, dest.join(FRAMES_DIR).join(name))
            .with_context(|| format!("copying {}", f.path.display()))?;
    }
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    atomic_write(&dest.join(TRIAL_META), text.as_bytes())?;
    log::info!(
        "ingested {} ({:.2} s, {} frames)",
        dest.display(),
        audio.duration_seconds(),
        frames.len()
    );
    Ok(())
}

pub fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    if a.id.is_some() && a.sources.len() != 1 {
        bail!("--id needs exactly one source");
    }
    ctx.ws.create()?;
    let mut seen = BTreeSet::new();
    let mut units = Vec::new();
    for src in &a.sources {
        let id = match &a.id {
            Some(id) => id.clone(),
            None => source_id(src)?,
        };
        if !seen.insert(id.clone()) {
            bail!("two sources map to trial id `{id}`");
        }
        let dest = ctx.ws.trial_dir(&id);
        units.push(
            Unit::new(id)
                .input(src.clone())
                .output(dest.join(TRIAL_AUDIO))
                .output(dest.join(TRIAL_META))
                .extra(json!({
                    "embodiment": a.embodiment,
                    "class": a.declared_class,
                    "audio_start_ns": a.audio_start_ns,
                })),
        );
    }
    let mut run = ctx.run("ingest", json!({}));
    run.units(&units, |u| {
        ingest_one(&u.inputs[0], &ctx.ws.trial_dir(&u.name), a)
    });
    run.finish()
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Noise-only recording.
    #[arg(long)]
    pub reference: PathBuf,
    /// Profile name; written to profiles/<name>.json.
    #[arg(long)]
    pub name: String,
    #[arg(long, default_value_t = 512)]
    pub n_fft: usize,
    #[arg(long, default_value_t = 128)]
    pub hop: usize,
}

pub fn profile(ctx: &Ctx, a: &ProfileArgs) -> Result<()> {
    let sp = StftParams {
        n_fft: a.n_fft,
        hop: a.hop,
        ..StftParams::default()
    };
    let out = ctx.ws.profiles_dir().join(format!("{}.json", a.name));
    let mut run = ctx.run("profile", json!({ "stft": sp }));
    run.unit(
        Unit::new(&a.name)
            .input(a.reference.clone())
            .output(out.clone()),
        |_| {
            let reference = load_working_audio(&a.reference)?;
            let p = build_noise_profile(&reference, &sp)?;
            std::fs::create_dir_all(ctx.ws.profiles_dir())?;
            p.save(&out)?;
            log::info!("wrote {}", out.display());
            Ok(())
        },
    );
    run.finish()
}

/// Resolve a noise profile: an explicit path or name, else the
/// embodiment's configured, workspace or bundled profile.
pub fn resolve_profile(
    ctx: &Ctx,
    spec: Option<&str>,
    embodiment: Embodiment,
) -> Result<NoiseProfile> {
    let name = match spec {
        Some(s) => {
            let p = PathBuf::from(s);
            if p.is_file() {
                return Ok(NoiseProfile::load(&p)?);
            }
            s.to_string()
        }
        None => {
            if let Some(p) = ctx.cfg.noise_profiles.get(embodiment.as_str()) {
                return Ok(NoiseProfile::load(ctx.ws.resolve(p))?);
            }
            embodiment.as_str().to_string()
        }
    };
    let local = ctx.ws.profiles_dir().join(format!("{name}.json"));
    if local.is_file() {
        return Ok(NoiseProfile::load(&local)?);
    }
    NoiseProfile::bundled(&name).with_context(|| {
        format!("no noise profile `{name}` (not a file, not in profiles/, not bundled)")
    })
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub trials: TrialArgs,
    /// Profile name or path (default: per embodiment).
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub n_std: Option<f64>,
    #[arg(long)]
    pub prop_decrease: Option<f64>,
}

pub fn denoise(ctx: &Ctx, a: &DenoiseArgs) -> Result<()> {
    let gate = GateParams {
        n_std_thresh: a.n_std.unwrap_or(ctx.cfg.gate.n_std_thresh),
        prop_decrease: a.prop_decrease.unwrap_or(ctx.cfg.gate.prop_decrease),
        ..ctx.cfg.gate
    };
    gate.validate()?;
    let trials = ctx.trials(&a.trials)?;
    let mut run = ctx.run("denoise", json!({ "gate": gate }));
    let mut units = Vec::new();
    let mut jobs: Vec<(TrialRecording, NoiseProfile)> = Vec::new();
    for t in trials {
        match resolve_profile(ctx, a.profile.as_deref(), t.meta.embodiment) {
            Ok(p) => {
                units.push(
                    Unit::new(&t.trial_id)
                        .input(t.raw_audio_path())
                        .output(t.dir.join(contactsense::dataset::DENOISED_AUDIO))
                        .extra(serde_json::to_value(&p)?),
                );
                jobs.push((t, p));
            }
            Err(e) => run.fail(&t.trial_id, format!("{e:#}")),
        }
    }
    run.units(&units, |u| {
        let (t, p) = jobs
            .iter()
            .find(|(t, _)| t.trial_id == u.name)
            .expect("unit has a job");
        let audio = load_working_audio(&t.raw_audio_path())?;
        let clean = spectral_gate(&audio, p, &gate)?;
        write_wav(&u.outputs[0], &clean)?;
        log::info!("denoised {}", t.trial_id);
        Ok(())
    });
    run.finish()
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub trials: TrialArgs,
    #[command(flatten)]
    pub params: SegmentationArgs,
}

pub fn segment(ctx: &Ctx, a: &SegmentArgs) -> Result<()> {
    let p = a.params.apply(&ctx.cfg.segmentation);
    p.validate()?;
    let trials = ctx.trials(&a.trials)?;
    let units: Vec<Unit> = trials
        .iter()
        .map(|t| {
            Unit::new(&t.trial_id)
                .input(t.audio_path())
                .input(t.dir.join(TRIAL_META))
                .output(ctx.ws.segments_path(&t.trial_id))
        })
        .collect();
    let mut run = ctx.run(
        "segment",
        json!({ "params": p, "envelope": ctx.cfg.envelope }),
    );
    run.units(&units, |u| {
        let t = trials.iter().find(|t| t.trial_id == u.name).expect("trial");
        let review = ctx.ws.reviews_dir().join(&t.trial_id);
        if review.exists() {
            if !ctx.force {
                bail!(
                    "has a review session in {}; rerun with --force to discard it",
                    review.display()
                );
            }
            std::fs::remove_dir_all(&review)?;
        }
        let (seg, doc) = segment_recording(t, &p, &ctx.cfg.envelope)?;
        atomic_write(&u.outputs[0], doc.to_json()?.as_bytes())?;
        log::info!(
            "{}: {} contact, {} ambient segments",
            t.trial_id,
            seg.contact.len(),
            seg.ambient.len()
        );
        Ok(())
    });
    run.finish()
}

pub fn accept(ctx: &Ctx, a: &TrialArgs) -> Result<()> {
    let trials = ctx.trials(a)?;
    let units: Vec<Unit> = trials
        .iter()
        .map(|t| {
            Unit::new(&t.trial_id)
                .output(ctx.ws.segments_path(&t.trial_id))
                .unstamped()
        })
        .collect();
    let mut run = ctx.run("accept", json!({}));
    run.units(&units, |u| {
        let t = trials.iter().find(|t| t.trial_id == u.name).expect("trial");
        let mut s = ReviewSession::open(&ctx.ws, &ctx.cfg, t)?;
        let pending: Vec<usize> = s
            .state()
            .views()
            .iter()
            .filter(|v| v.segment.review_state == ReviewState::Auto)
            .filter_map(|v| v.segment_id)
            .collect();
        for &id in &pending {
            s.review(id, ReviewAction::Accept)?;
        }
        if !pending.is_empty() || s.state().dirty || !u.outputs[0].exists() {
            s.export(&u.outputs[0])?;
        }
        log::info!("{}: accepted {} segments", t.trial_id, pending.len());
        Ok(())
    });
    run.finish()
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub trials: TrialArgs,
    /// Window length, seconds.
    #[arg(long, default_value_t = 0.8)]
    pub window: f64,
    /// Window stride, seconds.
    #[arg(long, default_value_t = 0.4)]
    pub stride: f64,
    /// Combined CSV (default: reports/features.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_segments(ctx: &Ctx, trial_id: &str) -> Result<SegmentDocument> {
    let path = ctx.ws.segments_path(trial_id);
    if !path.is_file() {
        bail!("no segment file; run `segment` first");
    }
    let text = std::fs::read_to_string(&path)?;
    let doc =
        SegmentDocument::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    if doc.trial_id != trial_id {
        bail!("{} belongs to trial `{}`", path.display(), doc.trial_id);
    }
    Ok(doc)
}

fn trial_features(ctx: &Ctx, t: &TrialRecording, a: &FeaturizeArgs) -> Result<Vec<FeatureRow>> {
    let doc = load_segments(ctx, &t.trial_id)?;
    let specs = window_segments(&doc.segments, t.meta.declared_class, a.window, a.stride)?;
    let audio = t.load_audio()?;
    specs
        .iter()
        .map(|w| {
            Ok(FeatureRow {
                trial_id: t.trial_id.clone(),
                segment_id: w.segment_index,
                window_start_s: w.start_s,
                label: w.label,
                features: extract_features(&audio.slice_seconds(w.start_s, w.len_s))?,
            })
        })
        .collect()
}

pub fn featurize(ctx: &Ctx, a: &FeaturizeArgs) -> Result<()> {
    let trials = ctx.trials(&a.trials)?;
    let dir = ctx.ws.reports_dir().join("features");
    let units: Vec<Unit> = trials
        .iter()
        .map(|t| {
            Unit::new(&t.trial_id)
                .input(t.audio_path())
                .input(ctx.ws.segments_path(&t.trial_id))
                .output(dir.join(format!("{}.csv", t.trial_id)))
        })
        .collect();
    let mut run = ctx.run(
        "featurize",
        json!({ "window_s": a.window, "stride_s": a.stride }),
    );
    run.units(&units, |u| {
        let t = trials.iter().find(|t| t.trial_id == u.name).expect("trial");
        let rows = trial_features(ctx, t, a)?;
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &rows)?;
        atomic_write(&u.outputs[0], &buf)?;
        Ok(())
    });
    let mut combined = String::new();
    for u in &units {
        if !run.succeeded(&u.name) {
            continue;
        }
        let text = std::fs::read_to_string(&u.outputs[0])?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if combined.is_empty() {
            combined.push_str(header);
            combined.push('\n');
        }
        for l in lines {
            combined.push_str(l);
            combined.push('\n');
        }
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| ctx.ws.reports_dir().join("features.csv"));
    if !combined.is_empty() {
        atomic_write(&out, combined.as_bytes())?;
        log::info!("wrote {}", out.display());
    }
    run.finish()
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub trials: TrialArgs,
    /// Dataset name; written to datasets/<name>/.
    #[arg(long, default_value = "default")]
    pub name: String,
    /// Window length, seconds.
    #[arg(long, default_value_t = 0.8)]
    pub window: f64,
    /// Window stride, seconds.
    #[arg(long, default_value_t = 0.4)]
    pub stride: f64,
    /// Fraction of trials per class in the training split.
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    /// Put every sample in this split instead (e.g. a held-out test set).
    #[arg(long)]
    pub split: Option<Split>,
    /// Augmentation settings (JSON); the seed comes from --seed.
    #[arg(long)]
    pub augment: Option<PathBuf>,
    /// Augmented copies per training sample.
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    /// Keep at most this many samples per class.
    #[arg(long)]
    pub balance_cap: Option<usize>,
    /// Skip writing mel and image tensor files.
    #[arg(long)]
    pub no_tensors: bool,
    /// Skip built-in encoder embeddings.
    #[arg(long)]
    pub no_embeddings: bool,
}

pub fn dataset(ctx: &Ctx, a: &DatasetArgs) -> Result<()> {
    let augment = match &a.augment {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut params: AugmentParams =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            params.seed = ctx.seed;
            params.validate()?;
            Some(AugmentSpec {
                params,
                copies: a.copies,
            })
        }
        None => None,
    };
    let params = DatasetParams {
        window_len_s: a.window,
        stride_s: a.stride,
        split: match a.split {
            Some(s) => SplitPolicy::Fixed(s),
            None => SplitPolicy::Stratified {
                ratio: a.ratio,
                seed: ctx.seed,
            },
        },
        materialize: !a.no_tensors,
        builtin_embeddings: !a.no_embeddings,
        augment,
        balance_cap: a.balance_cap,
        ..DatasetParams::default()
    };
    let trials = ctx.trials(&a.trials)?;
    let mut run = ctx.run("dataset", json!({ "name": a.name, "params": params }));
    let mut inputs = Vec::new();
    for t in trials {
        match load_segments(ctx, &t.trial_id) {
            Ok(segments) => inputs.push(TrialInput { trial: t, segments }),
            Err(e) => run.fail(&t.trial_id, format!("{e:#}")),
        }
    }
    if inputs.is_empty() {
        run.fail(&a.name, "no trials with segment files");
        return run.finish();
    }
    let out = ctx.ws.datasets_dir().join(&a.name);
    let unit = Unit::new(&a.name)
        .inputs(
            inputs
                .iter()
                .flat_map(|i| [i.trial.dir.clone(), ctx.ws.segments_path(&i.trial.trial_id)]),
        )
        .output(out.join(MANIFEST_FILE));
    run.unit(unit, |_| {
        if out.exists() {
            std::fs::remove_dir_all(&out)?;
        }
        let m = build_dataset(&inputs, &params, Some(&out))?;
        let leaked = m.leaked_trials();
        if !leaked.is_empty() {
            bail!("trials in more than one split: {}", leaked.join(", "));
        }
        let c = &m.header.class_counts;
        log::info!(
            "dataset {}: {} samples (leaf {}, twig {}, trunk {}, ambient {})",
            a.name,
            m.samples.len(),
            c.get(ContactClass::Leaf),
            c.get(ContactClass::Twig),
            c.get(ContactClass::Trunk),
            c.get(ContactClass::Ambient)
        );
        Ok(())
    });
    run.finish()
}
