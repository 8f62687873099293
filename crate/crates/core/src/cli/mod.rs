//! Command-line interface.

mod learn;
mod prep;
mod runlog;
mod stream;

use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};

use contactsense::dataset::{discover_trials, TrialRecording};
use contactsense::segmentation::SegmentationParams;
use contactsense::workspace::{ProjectConfig, Workspace};

#[derive(Debug, Parser)]
#[command(
    name = "contactsense",
    version,
    about = "Contact-microphone and camera curation, training and inference"
)]
pub struct Cli {
    /// Workspace root.
    #[arg(
        long,
        short = 'w',
        env = "CONTACTSENSE_WORKSPACE",
        default_value = ".",
        global = true
    )]
    pub workspace: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, short = 'j', env = "CONTACTSENSE_JOBS", global = true)]
    pub jobs: Option<usize>,
    /// Seed for every random choice in this invocation.
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// Redo work even when inputs are unchanged.
    #[arg(long, global = true)]
    pub force: bool,
    /// Log JSON lines to stderr.
    #[arg(long, global = true)]
    pub log_json: bool,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the workspace layout and a default config.json.
    Init,
    /// Copy trial directories into the workspace.
    Ingest(prep::IngestArgs),
    /// Build a noise profile from a noise-only recording.
    Profile(prep::ProfileArgs),
    /// Spectral-gate trial audio into denoised.wav.
    Denoise(prep::DenoiseArgs),
    /// Detect contact segments and write segments/<trial>.segments.json.
    Segment(prep::SegmentArgs),
    /// Accept every pending contact segment and export.
    Accept(TrialArgs),
    /// Serve the review API (and optionally the review UI).
    #[command(alias = "review")]
    Serve(stream::ServeArgs),
    /// Export scalar features of segment windows as CSV.
    Featurize(prep::FeaturizeArgs),
    /// Build a windowed, split dataset from segmented trials.
    Dataset(prep::DatasetArgs),
    /// Train the fusion classifier on a dataset.
    Train(learn::TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(learn::EvalArgs),
    /// Classify a recording with a sliding window.
    Infer(stream::InferArgs),
    /// Accuracy versus window length.
    Ablate(learn::AblateArgs),
    /// Render predictions onto camera frames.
    Overlay(stream::OverlayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Init => "init",
            Command::Ingest(_) => "ingest",
            Command::Profile(_) => "profile",
            Command::Denoise(_) => "denoise",
            Command::Segment(_) => "segment",
            Command::Accept(_) => "accept",
            Command::Serve(_) => "serve",
            Command::Featurize(_) => "featurize",
            Command::Dataset(_) => "dataset",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Infer(_) => "infer",
            Command::Ablate(_) => "ablate",
            Command::Overlay(_) => "overlay",
        }
    }
}

/// Trials to process; none means every trial in the workspace.
#[derive(Debug, Clone, Args)]
pub struct TrialArgs {
    /// Trial id (repeatable).
    #[arg(long = "trial", short = 't')]
    pub trials: Vec<String>,
}

/// Overrides for the workspace's segmentation defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct SegmentationArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Minimum contact duration, seconds.
    #[arg(long)]
    pub delta_min: Option<f64>,
    /// Maximum gap merged into one contact, seconds.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Minimum ambient segment duration, seconds.
    #[arg(long)]
    pub min_ambient: Option<f64>,
    #[arg(long)]
    pub noise_percentile: Option<f64>,
    #[arg(long)]
    pub signal_percentile: Option<f64>,
}

impl SegmentationArgs {
    pub fn apply(&self, base: &SegmentationParams) -> SegmentationParams {
        SegmentationParams {
            alpha_offset: self.alpha.unwrap_or(base.alpha_offset),
            beta_factor: self.beta.unwrap_or(base.beta_factor),
            delta_min_seconds: self.delta_min.unwrap_or(base.delta_min_seconds),
            gamma_squeeze_seconds: self.gamma.unwrap_or(base.gamma_squeeze_seconds),
            noise_percentile: self.noise_percentile.unwrap_or(base.noise_percentile),
            signal_percentile: self.signal_percentile.unwrap_or(base.signal_percentile),
            min_ambient_seconds: self.min_ambient.unwrap_or(base.min_ambient_seconds),
        }
    }
}

/// Resolved invocation context shared by every command.
pub struct Ctx {
    pub ws: Workspace,
    pub cfg: ProjectConfig,
    pub seed: u64,
    pub force: bool,
}

impl Ctx {
    pub fn run(&self, command: &str, params: serde_json::Value) -> runlog::Run {
        runlog::Run::new(&self.ws, command, params, self.seed, self.force)
    }

    /// The requested trials, or every trial in the workspace.
    pub fn trials(&self, sel: &TrialArgs) -> Result<Vec<TrialRecording>> {
        if sel.trials.is_empty() {
            let all = discover_trials(&self.ws.trials_dir())?;
            if all.is_empty() {
                anyhow::bail!("no trials in {}", self.ws.trials_dir().display());
            }
            return Ok(all);
        }
        sel.trials
            .iter()
            .map(|id| {
                self.ws
                    .open_trial(id)
                    .with_context(|| format!("trial `{id}`"))
            })
            .collect()
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let mut b = env_logger::Builder::new();
    b.filter_level(level).parse_default_env();
    if cli.log_json {
        b.format(|buf, record| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    b.init();
}

pub fn main() -> Result<()> {
    let cli = Cli::parse();
    init_logging(&cli);
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let ws = Workspace::new(&cli.workspace);
    if let Command::Init = cli.command {
        return init(&ws);
    }
    let cfg = ws
        .load_config()
        .with_context(|| format!("loading config of workspace {}", ws.root().display()))?;
    let ctx = Ctx {
        ws,
        cfg,
        seed: cli.seed,
        force: cli.force,
    };
    log::debug!("running {}", cli.command.name());
    match cli.command {
        Command::Init => unreachable!(),
        Command::Ingest(a) => prep::ingest(&ctx, &a),
        Command::Profile(a) => prep::profile(&ctx, &a),
        Command::Denoise(a) => prep::denoise(&ctx, &a),
        Command::Segment(a) => prep::segment(&ctx, &a),
        Command::Accept(a) => prep::accept(&ctx, &a),
        Command::Serve(a) => stream::serve(ctx, &a),
        Command::Featurize(a) => prep::featurize(&ctx, &a),
        Command::Dataset(a) => prep::dataset(&ctx, &a),
        Command::Train(a) => learn::train(&ctx, &a),
        Command::Eval(a) => learn::eval(&ctx, &a),
        Command::Infer(a) => stream::infer(&ctx, &a),
        Command::Ablate(a) => learn::ablate(&ctx, &a),
        Command::Overlay(a) => stream::overlay(&ctx, &a),
    }
}

fn init(ws: &Workspace) -> Result<()> {
    ws.create()?;
    if !ws.config_path().exists() {
        ws.save_config(&ProjectConfig::default())?;
    }
    log::info!("workspace ready at {}", ws.root().display());
    Ok(())
}
