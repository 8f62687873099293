//! Workspace layout and project configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{EnvelopeParams, WORKING_RATE};
use crate::dataset::TrialRecording;
use crate::denoise::GateParams;
use crate::error::{Error, Result};
use crate::features::MEL_VERSION;
use crate::segmentation::{segment_trial, SegmentDocument, SegmentationParams, TrialSegmentation};

pub const CONFIG_FILE: &str = "config.json";
pub const SEGMENTS_SUFFIX: &str = ".segments.json";

/// Project-wide settings stored at `workspace/config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub working_rate: u32,
    pub segmentation: SegmentationParams,
    pub envelope: EnvelopeParams,
    pub gate: GateParams,
    pub mel_version: String,
    /// Noise profile per embodiment name; relative paths resolve against the
    /// workspace. Absent entries fall back to the bundled profiles.
    pub noise_profiles: std::collections::BTreeMap<String, PathBuf>,
    /// Directory of externally computed embedding files, if any.
    pub embedding_store: Option<PathBuf>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            working_rate: WORKING_RATE,
            segmentation: SegmentationParams::default(),
            envelope: EnvelopeParams::default(),
            gate: GateParams::default(),
            mel_version: MEL_VERSION.to_string(),
            noise_profiles: Default::default(),
            embedding_store: None,
        }
    }
}

impl ProjectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.working_rate != WORKING_RATE {
            return Err(Error::param(
                "working_rate",
                format!("only {WORKING_RATE} Hz is supported"),
            ));
        }
        if self.mel_version != MEL_VERSION {
            return Err(Error::param(
                "mel_version",
                format!(
                    "workspace expects `{}`, this build has `{MEL_VERSION}`",
                    self.mel_version
                ),
            ));
        }
        self.segmentation.validate()?;
        self.gate.validate()
    }
}

/// Fixed directory layout under a workspace root.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn trials_dir(&self) -> PathBuf {
        self.root.join("trials")
    }

    pub fn trial_dir(&self, trial_id: &str) -> PathBuf {
        self.trials_dir().join(trial_id)
    }

    pub fn profiles_dir(&self) -> PathBuf {
        self.root.join("profiles")
    }

    pub fn segments_dir(&self) -> PathBuf {
        self.root.join("segments")
    }

    pub fn segments_path(&self, trial_id: &str) -> PathBuf {
        self.segments_dir()
            .join(format!("{trial_id}{SEGMENTS_SUFFIX}"))
    }

    pub fn reviews_dir(&self) -> PathBuf {
        self.root.join("reviews")
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    /// Create every layout directory.
    pub fn create(&self) -> Result<()> {
        for d in [
            self.trials_dir(),
            self.profiles_dir(),
            self.segments_dir(),
            self.reviews_dir(),
            self.datasets_dir(),
            self.checkpoints_dir(),
            self.reports_dir(),
            self.runs_dir(),
        ] {
            std::fs::create_dir_all(&d).map_err(|e| Error::from(e).at(&d))?;
        }
        Ok(())
    }

    /// `config.json` if present, else defaults.
    pub fn load_config(&self) -> Result<ProjectConfig> {
        let path = self.config_path();
        if !path.is_file() {
            return Ok(ProjectConfig::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::from(e).at(&path))?;
        let cfg: ProjectConfig =
            serde_json::from_str(&text).map_err(|e| Error::from(e).at(&path))?;
        cfg.validate().map_err(|e| e.at(&path))?;
        Ok(cfg)
    }

    pub fn save_config(&self, cfg: &ProjectConfig) -> Result<()> {
        let mut text = serde_json::to_string_pretty(cfg)?;
        text.push('\n');
        crate::util::atomic_write(&self.config_path(), text.as_bytes())
    }

    pub fn open_trial(&self, trial_id: &str) -> Result<TrialRecording> {
        let dir = self.trial_dir(trial_id);
        if !dir.join(crate::dataset::TRIAL_META).is_file() {
            return Err(Error::NotFound(format!("trial `{trial_id}`")));
        }
        TrialRecording::open(dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Segment a trial's working audio. Contact segments carry the trial's
/// declared class. The CLI and the review service both go through here.
pub fn segment_recording(
    trial: &TrialRecording,
    p: &SegmentationParams,
    env: &EnvelopeParams,
) -> Result<(TrialSegmentation, SegmentDocument)> {
    let audio = trial.load_audio().map_err(|e| e.at(trial.audio_path()))?;
    let seg = segment_trial(&audio, p, env)?;
    let doc = SegmentDocument::new(&trial.trial_id, p, &seg, Some(trial.meta.declared_class));
    Ok((seg, doc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        assert_eq!(ws.load_config().unwrap(), ProjectConfig::default());
        let mut cfg = ProjectConfig::default();
        cfg.segmentation.alpha_offset = 0.4;
        ws.save_config(&cfg).unwrap();
        assert_eq!(ws.load_config().unwrap(), cfg);
        std::fs::write(ws.config_path(), r#"{"working_rate": 44100}"#).unwrap();
        assert!(ws.load_config().is_err());
    }

    #[test]
    fn missing_trial_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        assert!(matches!(ws.open_trial("nope"), Err(Error::NotFound(_))));
    }
}
