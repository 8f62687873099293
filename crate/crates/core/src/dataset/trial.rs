use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, resample, Waveform, WORKING_RATE};
use crate::class::ContactClass;
use crate::error::{Error, Result};

pub const TRIAL_AUDIO: &str = "trial.wav";
pub const DENOISED_AUDIO: &str = "denoised.wav";
pub const TRIAL_META: &str = "trial.json";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embodiment {
    Probe,
    Robot,
}

impl Embodiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Embodiment::Probe => "probe",
            Embodiment::Robot => "robot",
        }
    }
}

impl fmt::Display for Embodiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Embodiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "probe" => Ok(Embodiment::Probe),
            "robot" => Ok(Embodiment::Robot),
            _ => Err(Error::param(
                "embodiment",
                format!("unknown embodiment `{s}`"),
            )),
        }
    }
}

/// Contents of `trial.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub embodiment: Embodiment,
    pub declared_class: ContactClass,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    /// Epoch time of the first audio sample, same clock as frame names.
    #[serde(default)]
    pub audio_start_ns: i64,
}

/// One camera frame: its file and epoch timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub path: PathBuf,
    pub timestamp_ns: i64,
}

/// A trial directory on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub trial_id: String,
    pub dir: PathBuf,
    pub meta: TrialMeta,
    /// Sorted by timestamp.
    pub frames: Vec<Frame>,
}

impl TrialRecording {
    /// Load `dir/trial.json` and list `dir/frames`. The trial id is the
    /// directory name.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let trial_id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::param("trial dir", "has no name"))?;
        let meta_path = dir.join(TRIAL_META);
        let text =
            std::fs::read_to_string(&meta_path).map_err(|e| Error::from(e).at(&meta_path))?;
        let meta: TrialMeta =
            serde_json::from_str(&text).map_err(|e| Error::from(e).at(&meta_path))?;
        let frames = list_frames(&dir.join(FRAMES_DIR))?;
        Ok(TrialRecording {
            trial_id,
            dir: dir.to_path_buf(),
            meta,
            frames,
        })
    }

    pub fn raw_audio_path(&self) -> PathBuf {
        self.dir.join(TRIAL_AUDIO)
    }

    /// The denoised recording if present, else the raw one.
    pub fn audio_path(&self) -> PathBuf {
        audio_path(&self.dir)
    }

    /// Audio at the working rate.
    pub fn load_audio(&self) -> Result<Waveform> {
        load_working_audio(&self.audio_path())
    }

    /// Frame time relative to the first audio sample, in seconds.
    pub fn frame_time(&self, f: &Frame) -> f64 {
        (f.timestamp_ns - self.meta.audio_start_ns) as f64 * 1e-9
    }
}

pub fn audio_path(trial_dir: &Path) -> PathBuf {
    let d = trial_dir.join(DENOISED_AUDIO);
    if d.exists() {
        d
    } else {
        trial_dir.join(TRIAL_AUDIO)
    }
}

pub fn load_working_audio(path: &Path) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate() == WORKING_RATE {
        Ok(w)
    } else {
        resample(&w, WORKING_RATE)
    }
}

/// Frames named `<epoch_ns>.jpg|jpeg|png`, sorted by timestamp. A missing
/// directory yields no frames; other names are skipped.
pub fn list_frames(dir: &Path) -> Result<Vec<Frame>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::from(e).at(dir))? {
        let path = entry?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if !matches!(ext.as_str(), "jpg" | "jpeg" | "png") {
            continue;
        }
        let Some(ts) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<i64>().ok())
        else {
            log::debug!("skipping frame with non-numeric name {}", path.display());
            continue;
        };
        frames.push(Frame {
            path,
            timestamp_ns: ts,
        });
    }
    frames.sort_by_key(|f| f.timestamp_ns);
    Ok(frames)
}

/// Every trial directory (one containing `trial.json`) under `root`,
/// sorted by id.
pub fn discover_trials(root: &Path) -> Result<Vec<TrialRecording>> {
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::from(e).at(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(TRIAL_META).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(TrialRecording::open).collect()
}
