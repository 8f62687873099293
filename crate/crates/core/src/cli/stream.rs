//! Infer, overlay and serve commands.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use serde_json::json;

use contactsense::audio::{Waveform, WORKING_RATE};
use contactsense::dataset::{load_working_audio, CropSpec, FRAMES_DIR};
use contactsense::inference::{
    mean_latency_ms, overlay_export, FrameSource, OverlayParams, StreamClassifier, StreamConfig,
    StreamDenoise, Timeline, TimestampMode, WindowClassifier, TIMELINE_FILE,
};
use contactsense::model::Checkpoint;
use contactsense::segmentation::{ContactSegment, SegmentDocument};
use contactsense::service::{self, AppState, DEFAULT_ADDR};

use super::learn::checkpoint_path;
use super::prep::resolve_profile;
use super::runlog::Unit;
use super::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Timestamp {
    /// Window midpoint.
    Midpoint,
    /// Window start.
    Start,
}

impl From<Timestamp> for TimestampMode {
    fn from(t: Timestamp) -> Self {
        match t {
            Timestamp::Midpoint => TimestampMode::Midpoint,
            Timestamp::Start => TimestampMode::Start,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint name or path.
    #[arg(long, default_value = "default")]
    pub checkpoint: String,
    /// WAV file to classify.
    #[arg(long, conflicts_with = "trial")]
    pub audio: Option<PathBuf>,
    /// Workspace trial to classify (its frames feed the image slot).
    #[arg(long)]
    pub trial: Option<String>,
    /// Replay the recording at its real rate.
    #[arg(long)]
    pub realtime: bool,
    /// Chunk size pushed to the stream, milliseconds.
    #[arg(long, default_value_t = 100.0)]
    pub chunk_ms: f64,
    /// Gate each window with this noise profile (name or path).
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, value_enum, default_value_t = Timestamp::Midpoint)]
    pub timestamp: Timestamp,
    /// Directory for timeline.json (default: reports/infer/<name>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_segments(path: &std::path::Path) -> Result<Vec<ContactSegment>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    Ok(SegmentDocument::from_json(&text)?.segments)
}

pub fn infer(ctx: &Ctx, a: &InferArgs) -> Result<()> {
    let ckpt = checkpoint_path(ctx, &a.checkpoint);
    let scfg = StreamConfig {
        timestamp: a.timestamp.into(),
        ..StreamConfig::default()
    };
    scfg.validate()?;
    let trial = match &a.trial {
        Some(id) => Some(ctx.ws.open_trial(id)?),
        None => None,
    };
    let (source, name) = match (&a.audio, &trial) {
        (Some(p), None) => (
            p.clone(),
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "audio".into()),
        ),
        (None, Some(t)) => (t.audio_path(), t.trial_id.clone()),
        _ => bail!("pass exactly one of --audio or --trial"),
    };
    let out_dir = a
        .out
        .clone()
        .unwrap_or_else(|| ctx.ws.reports_dir().join("infer").join(&name));
    let unit = Unit::new(&name)
        .input(ckpt.clone())
        .input(source.clone())
        .output(out_dir.join(TIMELINE_FILE))
        .unstamped();
    let mut run = ctx.run(
        "infer",
        json!({ "stream": scfg, "realtime": a.realtime, "chunk_ms": a.chunk_ms, "profile": a.profile }),
    );
    run.unit(unit, |_| {
        let ck = Checkpoint::load(&ckpt)?;
        let mut classifier = WindowClassifier::from_checkpoint(ck, scfg)?;
        if let Some(spec) = &a.profile {
            let embodiment = trial
                .as_ref()
                .map(|t| t.meta.embodiment)
                .unwrap_or(contactsense::dataset::Embodiment::Probe);
            classifier = classifier.with_denoise(StreamDenoise {
                profile: resolve_profile(ctx, Some(spec), embodiment)?,
                gate: ctx.cfg.gate,
            })?;
        }
        let mut audio_start_ns = 0;
        let mut segments = Vec::new();
        if let Some(t) = &trial {
            audio_start_ns = t.meta.audio_start_ns;
            segments = load_segments(&ctx.ws.segments_path(&t.trial_id))?;
            classifier = classifier.with_frames(FrameSource {
                frames: t.frames.clone(),
                audio_start_ns,
                crop: CropSpec::default(),
            });
        }
        let audio = load_working_audio(&source)?;
        let chunk = ((a.chunk_ms / 1000.0 * WORKING_RATE as f64).round() as usize).max(1);
        let preds = stream_audio(classifier, &audio, chunk, a.realtime)?;
        let params = OverlayParams {
            window_s: scfg.audio_window_s,
            timestamp: scfg.timestamp,
            audio_start_ns,
            ..OverlayParams::default()
        };
        let s = overlay_export(&preds, &segments, &[], &params, &out_dir)?;
        log::info!(
            "{name}: {} windows, mean latency {:.2} ms, timeline {}",
            preds.len(),
            mean_latency_ms(&preds),
            s.timeline.display()
        );
        Ok(())
    });
    run.finish()
}

/// Feed `audio` through a bounded channel from a reader thread and print
/// each prediction as a JSON line as soon as it is ready.
fn stream_audio(
    classifier: WindowClassifier,
    audio: &Waveform,
    chunk: usize,
    realtime: bool,
) -> Result<Vec<contactsense::inference::TimedPrediction>> {
    let mut stream = StreamClassifier::new(classifier, chunk)?;
    let (tx, rx) = sync_channel::<Vec<f64>>(4);
    let chunk_time = Duration::from_secs_f64(chunk as f64 / WORKING_RATE as f64);
    std::thread::scope(|scope| {
        scope.spawn(move || {
            let start = Instant::now();
            for (i, c) in audio.samples().chunks(chunk).enumerate() {
                if realtime {
                    let due = start + chunk_time * (i as u32 + 1);
                    if let Some(wait) = due.checked_duration_since(Instant::now()) {
                        std::thread::sleep(wait);
                    }
                }
                if tx.send(c.to_vec()).is_err() {
                    break;
                }
            }
        });
        let mut preds = Vec::new();
        let stdout = std::io::stdout();
        for c in rx {
            for p in stream.push(&c)? {
                let event = &Timeline::new(std::slice::from_ref(&p), &[], 0.0).events[0];
                let mut out = stdout.lock();
                writeln!(out, "{}", serde_json::to_string(event)?)?;
                out.flush()?;
                preds.push(p);
            }
        }
        Ok(preds)
    })
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Trial whose frames are annotated.
    #[arg(long)]
    pub trial: String,
    /// Timeline from `infer` (default: reports/infer/<trial>/timeline.json).
    #[arg(long)]
    pub timeline: Option<PathBuf>,
    /// Output directory (default: the timeline's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Timestamp::Midpoint)]
    pub timestamp: Timestamp,
    /// Height of the annotation strip in pixels.
    #[arg(long, default_value_t = 24)]
    pub strip_height: u32,
}

pub fn overlay(ctx: &Ctx, a: &OverlayArgs) -> Result<()> {
    let trial = ctx.ws.open_trial(&a.trial)?;
    let timeline_path = a.timeline.clone().unwrap_or_else(|| {
        ctx.ws
            .reports_dir()
            .join("infer")
            .join(&a.trial)
            .join(TIMELINE_FILE)
    });
    let out = match &a.out {
        Some(o) => o.clone(),
        None => timeline_path
            .parent()
            .map(PathBuf::from)
            .context("timeline path has no directory")?,
    };
    let unit = Unit::new(&a.trial)
        .input(timeline_path.clone())
        .input(trial.dir.join(FRAMES_DIR))
        .input(ctx.ws.segments_path(&a.trial))
        .output(out.join(FRAMES_DIR));
    let mut run = ctx.run(
        "overlay",
        json!({ "timestamp": TimestampMode::from(a.timestamp), "strip_height": a.strip_height }),
    );
    run.unit(unit, |_| {
        let timeline = Timeline::load(&timeline_path)?;
        let segments = if timeline.segments.is_empty() {
            load_segments(&ctx.ws.segments_path(&a.trial))?
        } else {
            timeline.segments.clone()
        };
        let params = OverlayParams {
            window_s: timeline.window_s,
            timestamp: a.timestamp.into(),
            audio_start_ns: trial.meta.audio_start_ns,
            strip_height: a.strip_height,
        };
        let s = overlay_export(
            &timeline.predictions(),
            &segments,
            &trial.frames,
            &params,
            &out,
        )?;
        log::info!(
            "{}: {} frames written, {} skipped",
            a.trial,
            s.frames_written,
            s.frames_skipped
        );
        Ok(())
    });
    run.finish()
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = DEFAULT_ADDR)]
    pub addr: SocketAddr,
    /// Directory of static review UI assets.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

pub fn serve(ctx: Ctx, a: &ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    let state = Arc::new(AppState::new(ctx.ws, ctx.cfg));
    rt.block_on(service::serve(state, a.addr, a.ui.clone()))
        .with_context(|| format!("serving on {}", a.addr))
}
