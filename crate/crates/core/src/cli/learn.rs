//! Train, eval and ablate commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use contactsense::audio::Waveform;
use contactsense::dataset::{
    window_segments, Manifest, Split, TrialRecording, EMBEDDINGS_DIR, MANIFEST_FILE,
};
use contactsense::eval::{
    ablation_csv, ablation_json, binary_collapse, load_reference_curve, metrics, parse_durations,
    window_ablation, AblationConfig, AblationSource, ConfusionMatrix, LabeledWindow, MetricReport,
    ReferenceCurve, SyntheticPatternSource,
};
use contactsense::model::{
    evaluate, examples_from_manifest, train as fit, write_history_csv, Checkpoint, CheckpointMeta,
    EmbeddingStore, EncoderKind, FusionConfig, Slot, TrainConfig,
};
use contactsense::segmentation::SegmentDocument;
use contactsense::util::atomic_write;
use contactsense::{ContactClass, N_CLASSES};

use super::runlog::Unit;
use super::{Ctx, TrialArgs};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset name under datasets/.
    #[arg(long, default_value = "default")]
    pub dataset: String,
    /// Checkpoint name (default: the dataset name).
    #[arg(long)]
    pub name: Option<String>,
    /// JSON with `fusion` and/or `train` sections, or a bare fusion config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train on the audio_spectral slot only.
    #[arg(long)]
    pub audio_only: bool,
    /// Directory of precomputed embedding files.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

fn manifest_path(ctx: &Ctx, dataset: &str) -> PathBuf {
    ctx.ws.datasets_dir().join(dataset).join(MANIFEST_FILE)
}

fn load_manifest(ctx: &Ctx, dataset: &str) -> Result<Manifest> {
    let p = manifest_path(ctx, dataset);
    if !p.is_file() {
        bail!("no dataset `{dataset}`; run `dataset --name {dataset}` first");
    }
    Ok(Manifest::load(&p)?)
}

/// External store from the flag or the config, else the dataset's
/// built-in embeddings.
fn embedding_dir(ctx: &Ctx, dataset: &str, flag: Option<&Path>) -> (PathBuf, EncoderKind) {
    match flag.map(Path::to_path_buf).or_else(|| {
        ctx.cfg
            .embedding_store
            .as_deref()
            .map(|p| ctx.ws.resolve(p))
    }) {
        Some(p) => (p, EncoderKind::External),
        None => (
            ctx.ws.datasets_dir().join(dataset).join(EMBEDDINGS_DIR),
            EncoderKind::Builtin,
        ),
    }
}

fn default_slots(encoder: EncoderKind, audio_only: bool) -> Vec<Slot> {
    match (encoder, audio_only) {
        (_, true) => vec![Slot::AudioSpectral],
        (EncoderKind::Builtin, false) => vec![Slot::AudioSpectral, Slot::Image],
        (EncoderKind::External, false) => Slot::ALL.to_vec(),
    }
}

fn load_configs(
    a: &TrainArgs,
    encoder: EncoderKind,
    seed: u64,
) -> Result<(FusionConfig, TrainConfig)> {
    let (mut fusion, mut train): (Value, Value) = match &a.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let v: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if v.get("fusion").is_some() || v.get("train").is_some() {
                (
                    v.get("fusion").cloned().unwrap_or(json!({})),
                    v.get("train").cloned().unwrap_or(json!({})),
                )
            } else {
                (v, json!({}))
            }
        }
        None => (json!({}), json!({})),
    };
    if let Some(obj) = fusion.as_object_mut() {
        if !obj.contains_key("slots") || a.audio_only {
            obj.insert(
                "slots".into(),
                serde_json::to_value(default_slots(encoder, a.audio_only))?,
            );
        }
    }
    if let Some(obj) = train.as_object_mut() {
        obj.insert("seed".into(), json!(seed));
    }
    let fusion: FusionConfig = serde_json::from_value(fusion).context("fusion config")?;
    let mut train: TrainConfig = serde_json::from_value(train).context("train config")?;
    if let Some(e) = a.epochs {
        train.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        train.batch_size = b;
    }
    if let Some(p) = a.patience {
        train.early_stop_patience = p;
    }
    fusion.validate()?;
    train.validate()?;
    if encoder == EncoderKind::Builtin && fusion.slots.contains(&Slot::AudioSemantic) {
        bail!("the audio_semantic slot needs precomputed embeddings (--embeddings)");
    }
    Ok((fusion, train))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    dataset: &'a str,
    checkpoint: String,
    encoder: EncoderKind,
    fusion: &'a FusionConfig,
    train: &'a TrainConfig,
    best_epoch: usize,
    best_val_macro_f1: f64,
    n_train: usize,
    n_val: usize,
}

pub fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let name = a.name.clone().unwrap_or_else(|| a.dataset.clone());
    let (emb_dir, encoder) = embedding_dir(ctx, &a.dataset, a.embeddings.as_deref());
    let (fusion, tc) = load_configs(a, encoder, ctx.seed)?;
    let ckpt = ctx.ws.checkpoints_dir().join(format!("{name}.ckpt"));
    let history = ctx.ws.reports_dir().join(format!("{name}.history.csv"));
    let summary = ctx.ws.reports_dir().join(format!("{name}.train.json"));
    let mut run = ctx.run(
        "train",
        json!({ "dataset": a.dataset, "fusion": fusion, "train": tc, "encoder": encoder }),
    );
    let unit = Unit::new(&name)
        .input(manifest_path(ctx, &a.dataset))
        .input(emb_dir.clone())
        .output(ckpt.clone())
        .output(history.clone())
        .output(summary.clone());
    run.unit(unit, |_| {
        let manifest = load_manifest(ctx, &a.dataset)?;
        let store = EmbeddingStore::load_dir(&emb_dir)?;
        let tr = examples_from_manifest(&manifest, &store, Split::Train, &fusion.slots)?;
        let va = examples_from_manifest(&manifest, &store, Split::Val, &fusion.slots)?;
        log::info!(
            "training {name} on {} train / {} val samples, slots {:?}",
            tr.len(),
            va.len(),
            fusion.slots
        );
        let out = fit(&tr, &va, &fusion, &tc)?;
        let meta = CheckpointMeta {
            epoch: Some(out.best_epoch),
            val_macro_f1: Some(out.best_val_f1),
            seed: Some(tc.seed),
            encoder,
            feature_fingerprint: Some(manifest.header.feature_params_fingerprint.clone()),
        };
        std::fs::create_dir_all(ctx.ws.checkpoints_dir())?;
        Checkpoint::new(out.best, meta).save(&ckpt)?;
        write_history_csv(&history, &out.history)?;
        let doc = TrainSummary {
            dataset: &a.dataset,
            checkpoint: ckpt.display().to_string(),
            encoder,
            fusion: &fusion,
            train: &tc,
            best_epoch: out.best_epoch,
            best_val_macro_f1: out.best_val_f1,
            n_train: tr.len(),
            n_val: va.len(),
        };
        atomic_write(
            &summary,
            (serde_json::to_string_pretty(&doc)? + "\n").as_bytes(),
        )?;
        log::info!(
            "wrote {} (epoch {}, val macro-F1 {:.4})",
            ckpt.display(),
            out.best_epoch,
            out.best_val_f1
        );
        Ok(())
    });
    run.finish()
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset name under datasets/.
    #[arg(long, default_value = "default")]
    pub dataset: String,
    /// Checkpoint name or path (default: the dataset name).
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long, default_value = "val")]
    pub split: Split,
    /// Directory of precomputed embedding files.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

pub fn checkpoint_path(ctx: &Ctx, spec: &str) -> PathBuf {
    let p = PathBuf::from(spec);
    if p.is_file() {
        p
    } else {
        ctx.ws.checkpoints_dir().join(format!("{spec}.ckpt"))
    }
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: String,
    dataset: &'a str,
    split: Split,
    n: usize,
    loss: f64,
    classes: Vec<&'static str>,
    report: MetricReport,
    confusion: ConfusionMatrix,
    binary_report: MetricReport,
    binary_confusion: ConfusionMatrix,
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let spec = a.checkpoint.clone().unwrap_or_else(|| a.dataset.clone());
    let ckpt_path = checkpoint_path(ctx, &spec);
    let stem = ckpt_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.clone());
    let json_out = ctx
        .ws
        .reports_dir()
        .join(format!("{stem}.{}.eval.json", a.split));
    let text_out = json_out.with_extension("txt");
    let mut run = ctx.run("eval", json!({ "dataset": a.dataset, "split": a.split }));
    let ck = Checkpoint::load(&ckpt_path)?;
    let (emb_dir, encoder) = match ck.meta.encoder {
        EncoderKind::Builtin => (
            ctx.ws.datasets_dir().join(&a.dataset).join(EMBEDDINGS_DIR),
            EncoderKind::Builtin,
        ),
        EncoderKind::External => embedding_dir(ctx, &a.dataset, a.embeddings.as_deref()),
    };
    if encoder != ck.meta.encoder {
        bail!("checkpoint was trained on precomputed embeddings; pass --embeddings");
    }
    let unit = Unit::new(&stem)
        .input(ckpt_path.clone())
        .input(manifest_path(ctx, &a.dataset))
        .input(emb_dir.clone())
        .output(json_out.clone())
        .output(text_out.clone());
    run.unit(unit, |_| {
        let manifest = load_manifest(ctx, &a.dataset)?;
        if let Some(fp) = &ck.meta.feature_fingerprint {
            if fp != &manifest.header.feature_params_fingerprint {
                bail!("dataset features differ from the checkpoint's training features");
            }
        }
        let store = EmbeddingStore::load_dir(&emb_dir)?;
        let examples =
            examples_from_manifest(&manifest, &store, a.split, &ck.model.config().slots)?;
        let ev = evaluate(&ck.model, &examples)?;
        let binary = binary_collapse(&ev.confusion);
        let doc = EvalReport {
            checkpoint: ckpt_path.display().to_string(),
            dataset: &a.dataset,
            split: a.split,
            n: examples.len(),
            loss: ev.loss,
            classes: (0..N_CLASSES)
                .map(|i| ContactClass::from_index(i).expect("class").as_str())
                .collect(),
            binary_report: metrics(&binary)?,
            binary_confusion: binary,
            report: ev.report,
            confusion: ev.confusion,
        };
        atomic_write(
            &json_out,
            (serde_json::to_string_pretty(&doc)? + "\n").as_bytes(),
        )?;
        let text = format!(
            "{} on {} ({}, n={})\n\n{}\nbinary\n{}",
            stem,
            a.dataset,
            a.split,
            doc.n,
            doc.report.to_text(&doc.classes),
            doc.binary_report.to_text(&["ambient", "contact"])
        );
        atomic_write(&text_out, text.as_bytes())?;
        print!("{text}");
        Ok(())
    });
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateSource {
    /// Constructed tone-pattern trials with a 0.6 s class cycle.
    Synthetic,
    /// Segmented trials in the workspace.
    Workspace,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `start:stop:step` or a comma-separated list of seconds.
    #[arg(long, default_value = "0.1:1.0:0.1")]
    pub durations: String,
    #[arg(long, value_enum, default_value_t = AblateSource::Synthetic)]
    pub source: AblateSource,
    #[command(flatten)]
    pub trials: TrialArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train duration points concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Report name; written to reports/<name>.csv and .json.
    #[arg(long, default_value = "ablation")]
    pub name: String,
    /// Reference curve JSON to include (default: the bundled one).
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

/// Windows from segmented workspace trials, split by trial within each
/// declared class.
struct TrialSource {
    trials: Vec<(TrialRecording, SegmentDocument, Waveform, bool)>,
    stride_s: f64,
}

impl TrialSource {
    fn load(ctx: &Ctx, sel: &TrialArgs) -> Result<Self> {
        let mut by_class: BTreeMap<ContactClass, Vec<TrialRecording>> = BTreeMap::new();
        for t in ctx.trials(sel)? {
            by_class.entry(t.meta.declared_class).or_default().push(t);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut trials = Vec::new();
        for (_, mut group) in by_class {
            group.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
            group.shuffle(&mut rng);
            let n_val = if group.len() >= 2 {
                (group.len() as f64 * 0.2).ceil() as usize
            } else {
                0
            };
            for (i, t) in group.into_iter().enumerate() {
                let path = ctx.ws.segments_path(&t.trial_id);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("trial `{}` has no segment file", t.trial_id))?;
                let doc = SegmentDocument::from_json(&text)?;
                let audio = t.load_audio()?;
                trials.push((t, doc, audio, i >= n_val));
            }
        }
        Ok(TrialSource {
            trials,
            stride_s: 0.1,
        })
    }
}

impl AblationSource for TrialSource {
    fn windows(&self, duration_s: f64) -> contactsense::Result<Vec<LabeledWindow>> {
        let mut out = Vec::new();
        for (t, doc, audio, train) in &self.trials {
            for w in window_segments(
                &doc.segments,
                t.meta.declared_class,
                duration_s,
                self.stride_s,
            )? {
                out.push(LabeledWindow {
                    audio: audio.slice_seconds(w.start_s, w.len_s),
                    label: w.label.index(),
                    train: *train,
                });
            }
        }
        Ok(out)
    }
}

pub fn ablate(ctx: &Ctx, a: &AblateArgs) -> Result<()> {
    let durations = parse_durations(&a.durations)?;
    let mut cfg = AblationConfig {
        durations,
        parallel: a.parallel,
        ..AblationConfig::default()
    };
    cfg.train.seed = ctx.seed;
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    let reference = match &a.reference {
        Some(p) => load_reference_curve(p)?,
        None => ReferenceCurve::bundled(),
    };
    let csv_out = ctx.ws.reports_dir().join(format!("{}.csv", a.name));
    let json_out = ctx.ws.reports_dir().join(format!("{}.json", a.name));
    let mut unit = Unit::new(&a.name)
        .output(csv_out.clone())
        .output(json_out.clone())
        .extra(json!({ "source": format!("{:?}", a.source), "reference": reference }));
    if a.source == AblateSource::Workspace {
        unit = unit.inputs(
            ctx.trials(&a.trials)?
                .iter()
                .flat_map(|t| [t.audio_path(), ctx.ws.segments_path(&t.trial_id)]),
        );
    }
    let mut run = ctx.run(
        "ablate",
        json!({
            "durations": cfg.durations,
            "fusion": cfg.fusion,
            "train": cfg.train,
        }),
    );
    run.unit(unit, |_| {
        let points = match a.source {
            AblateSource::Synthetic => {
                let src = SyntheticPatternSource {
                    seed: ctx.seed,
                    ..SyntheticPatternSource::default()
                };
                window_ablation(&src, &cfg)?
            }
            AblateSource::Workspace => window_ablation(&TrialSource::load(ctx, &a.trials)?, &cfg)?,
        };
        atomic_write(&csv_out, ablation_csv(&points).as_bytes())?;
        atomic_write(
            &json_out,
            ablation_json(&points, Some(&reference))?.as_bytes(),
        )?;
        for p in &points {
            println!("{:.2}\t{:.4}\t{}", p.duration_s, p.accuracy, p.n_samples);
        }
        Ok(())
    });
    run.finish()
}
