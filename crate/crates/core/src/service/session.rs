use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{smoothed_envelope, Envelope};
use crate::class::ContactClass;
use crate::dataset::TrialRecording;
use crate::error::{Error, Result};
use crate::segmentation::{
    mine_ambient, segment_envelope, ContactSegment, ParamsRecord, ReviewState, SegmentDocument,
    SegmentKind, SegmentationParams, Thresholds,
};
use crate::workspace::{ProjectConfig, Workspace};

pub const REVIEW_LOG: &str = "log.jsonl";
pub const REVIEW_SNAPSHOT: &str = "snapshot.json";
/// Events between snapshots.
pub const SNAPSHOT_EVERY: u64 = 16;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ReviewAction {
    Accept,
    Reject,
    Relabel { label: ContactClass },
    AdjustBounds { start_s: f64, end_s: f64 },
}

/// A segment as presented to clients. Contact segments are addressed by
/// their index among the trial's contact segments; ambient segments are
/// derived and carry no id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentView {
    pub segment_id: Option<usize>,
    #[serde(flatten)]
    pub segment: ContactSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub trial_id: String,
    pub params: SegmentationParams,
    pub thresholds: Thresholds,
    pub segments: Vec<ContactSegment>,
    pub dirty: bool,
    pub last_export_path: Option<PathBuf>,
    /// Sequence number of the last applied log entry.
    pub seq: u64,
}

impl SessionState {
    pub fn views(&self) -> Vec<SegmentView> {
        let mut next = 0;
        self.segments
            .iter()
            .map(|s| {
                let segment_id = (s.kind == SegmentKind::Contact).then(|| {
                    next += 1;
                    next - 1
                });
                SegmentView {
                    segment_id,
                    segment: s.clone(),
                }
            })
            .collect()
    }

    fn contact_positions(&self) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == SegmentKind::Contact)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Open {
        session_id: String,
        params: SegmentationParams,
        thresholds: Thresholds,
        segments: Vec<ContactSegment>,
    },
    Resegment {
        params: SegmentationParams,
    },
    Review {
        segment_id: usize,
        #[serde(flatten)]
        action: ReviewAction,
    },
    Export {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogEntry {
    seq: u64,
    #[serde(flatten)]
    event: LogEvent,
}

/// Envelope and duration a session recomputes segments from.
#[derive(Debug, Clone)]
pub struct TrialSignal {
    pub envelope: Envelope,
    pub duration_s: f64,
}

impl TrialSignal {
    pub fn load(trial: &TrialRecording, cfg: &ProjectConfig) -> Result<Self> {
        let audio = trial.load_audio().map_err(|e| e.at(trial.audio_path()))?;
        let envelope = smoothed_envelope(
            &audio,
            cfg.envelope.window_seconds,
            cfg.envelope.hop_seconds,
        )?;
        Ok(TrialSignal {
            envelope,
            duration_s: audio.duration_seconds(),
        })
    }
}

/// One trial's review session, persisted as an append-only event log in
/// `reviews/<trial>/` with periodic snapshots.
pub struct ReviewSession {
    state: SessionState,
    signal: TrialSignal,
    declared: ContactClass,
    dir: PathBuf,
    log: File,
}

impl ReviewSession {
    /// Resume the persisted session, or start one from the trial's segment
    /// file (or a fresh segmentation with the configured parameters).
    pub fn open(ws: &Workspace, cfg: &ProjectConfig, trial: &TrialRecording) -> Result<Self> {
        let signal = TrialSignal::load(trial, cfg)?;
        let dir = ws.reviews_dir().join(&trial.trial_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::from(e).at(&dir))?;
        let log_path = dir.join(REVIEW_LOG);
        let entries = read_log(&log_path)?;
        let snapshot = read_snapshot(&dir.join(REVIEW_SNAPSHOT))?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::from(e).at(&log_path))?;
        let mut s = ReviewSession {
            state: SessionState {
                session_id: String::new(),
                trial_id: trial.trial_id.clone(),
                params: cfg.segmentation,
                thresholds: Thresholds {
                    t_contact: 0.0,
                    t_noncontact: 0.0,
                    f_noise: 0.0,
                    f_signal: 0.0,
                },
                segments: Vec::new(),
                dirty: false,
                last_export_path: None,
                seq: 0,
            },
            signal,
            declared: trial.meta.declared_class,
            dir,
            log,
        };
        if let Some(snap) = snapshot {
            s.state = snap;
        }
        let replay: Vec<LogEntry> = entries
            .into_iter()
            .filter(|e| e.seq > s.state.seq)
            .collect();
        if s.state.seq == 0 && replay.is_empty() {
            let event = s.initial_event(ws, trial, cfg)?;
            s.commit(event)?;
        } else {
            if s.state.seq == 0 && !matches!(replay[0].event, LogEvent::Open { .. }) {
                return Err(Error::format(
                    "review log",
                    "first entry is not an open event",
                ));
            }
            for e in replay {
                if e.seq != s.state.seq + 1 {
                    return Err(Error::format(
                        "review log",
                        format!("expected seq {}, found {}", s.state.seq + 1, e.seq),
                    ));
                }
                s.apply(&e.event)?;
                s.state.seq = e.seq;
            }
            log::info!(
                "resumed review of `{}` at seq {}",
                s.state.trial_id,
                s.state.seq
            );
        }
        Ok(s)
    }

    fn initial_event(
        &self,
        ws: &Workspace,
        trial: &TrialRecording,
        cfg: &ProjectConfig,
    ) -> Result<LogEvent> {
        let session_id = format!("{}-{:016x}", trial.trial_id, rand::random::<u64>());
        let path = ws.segments_path(&trial.trial_id);
        if path.is_file() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::from(e).at(&path))?;
            let doc = SegmentDocument::from_json(&text).map_err(|e| e.at(&path))?;
            return Ok(LogEvent::Open {
                session_id,
                params: doc.params(),
                thresholds: doc.thresholds,
                segments: doc.segments,
            });
        }
        let doc = self.resegment_document(&cfg.segmentation)?;
        Ok(LogEvent::Open {
            session_id,
            params: cfg.segmentation,
            thresholds: doc.thresholds,
            segments: doc.segments,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn signal(&self) -> &TrialSignal {
        &self.signal
    }

    pub fn declared_class(&self) -> ContactClass {
        self.declared
    }

    /// The segment document the CLI would write for `p`.
    pub fn resegment_document(&self, p: &SegmentationParams) -> Result<SegmentDocument> {
        resegment(&self.signal, &self.state.trial_id, self.declared, p)
    }

    /// Replace the working segments with a fresh segmentation.
    pub fn resegment(&mut self, p: SegmentationParams) -> Result<SegmentDocument> {
        let doc = self.resegment_document(&p)?;
        self.commit(LogEvent::Resegment { params: p })?;
        Ok(doc)
    }

    /// Apply a review action to contact segment `segment_id`.
    pub fn review(&mut self, segment_id: usize, action: ReviewAction) -> Result<SegmentView> {
        self.commit(LogEvent::Review { segment_id, action })?;
        let pos = self.state.contact_positions()[segment_id];
        Ok(SegmentView {
            segment_id: Some(segment_id),
            segment: self.state.segments[pos].clone(),
        })
    }

    /// The reviewed document: rejected contact segments are dropped and
    /// ambient intervals recomputed around the kept ones.
    pub fn export_document(&self) -> Result<SegmentDocument> {
        let kept: Vec<ContactSegment> = self
            .state
            .segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Contact && s.review_state != ReviewState::Rejected)
            .cloned()
            .collect();
        let segments = with_ambient(
            &self.signal,
            &self.state.thresholds,
            &self.state.params,
            kept,
        );
        let doc = SegmentDocument {
            trial_id: self.state.trial_id.clone(),
            params: ParamsRecord::from(&self.state.params),
            thresholds: self.state.thresholds,
            segments,
        };
        doc.check_invariants()?;
        Ok(doc)
    }

    /// Write the reviewed document atomically to `path`.
    pub fn export(&mut self, path: &Path) -> Result<SegmentDocument> {
        let doc = self.export_document()?;
        crate::util::atomic_write(path, doc.to_json()?.as_bytes())?;
        self.commit(LogEvent::Export {
            path: path.to_path_buf(),
        })?;
        Ok(doc)
    }

    /// Validate and apply an event, then make it durable. The in-memory
    /// state only changes once the log entry is on disk.
    fn commit(&mut self, event: LogEvent) -> Result<()> {
        let before = self.state.clone();
        self.apply(&event)?;
        let entry = LogEntry {
            seq: before.seq + 1,
            event,
        };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        let written = self
            .log
            .write_all(line.as_bytes())
            .and_then(|_| self.log.sync_data());
        if let Err(e) = written {
            self.state = before;
            return Err(Error::from(e).at(self.dir.join(REVIEW_LOG)));
        }
        self.state.seq = entry.seq;
        if self.state.seq % SNAPSHOT_EVERY == 0 {
            self.snapshot()?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<()> {
        let text = serde_json::to_string(&self.state)?;
        crate::util::atomic_write(&self.dir.join(REVIEW_SNAPSHOT), text.as_bytes())
    }

    fn apply(&mut self, event: &LogEvent) -> Result<()> {
        match event {
            LogEvent::Open {
                session_id,
                params,
                thresholds,
                segments,
            } => {
                self.state.session_id = session_id.clone();
                self.state.params = *params;
                self.state.thresholds = *thresholds;
                self.state.segments = segments.clone();
                self.state.dirty = false;
            }
            LogEvent::Resegment { params } => {
                let doc = self.resegment_document(params)?;
                self.state.params = *params;
                self.state.thresholds = doc.thresholds;
                self.state.segments = doc.segments;
                self.state.dirty = true;
            }
            LogEvent::Review { segment_id, action } => {
                self.apply_review(*segment_id, action)?;
                self.state.dirty = true;
            }
            LogEvent::Export { path } => {
                self.state.last_export_path = Some(path.clone());
                self.state.dirty = false;
            }
        }
        Ok(())
    }

    fn apply_review(&mut self, segment_id: usize, action: &ReviewAction) -> Result<()> {
        let positions = self.state.contact_positions();
        let &pos = positions.get(segment_id).ok_or_else(|| {
            Error::NotFound(format!(
                "segment {segment_id} of trial `{}`",
                self.state.trial_id
            ))
        })?;
        let mut contacts: Vec<ContactSegment> = positions
            .iter()
            .map(|&i| self.state.segments[i].clone())
            .collect();
        let seg = &mut contacts[segment_id];
        match action {
            ReviewAction::Accept => seg.review_state = ReviewState::Accepted,
            ReviewAction::Reject => seg.review_state = ReviewState::Rejected,
            ReviewAction::Relabel { label } => {
                if !label.is_contact() {
                    return Err(Error::param(
                        "label",
                        "contact segments take leaf, twig or trunk; reject the segment instead",
                    ));
                }
                seg.label = Some(*label);
                seg.review_state = ReviewState::Edited;
            }
            &ReviewAction::AdjustBounds { start_s, end_s } => {
                check_bounds(
                    start_s,
                    end_s,
                    segment_id,
                    &contacts,
                    self.signal.duration_s,
                    self.state.params.delta_min_seconds,
                )?;
                let seg = &mut contacts[segment_id];
                seg.start_seconds = start_s;
                seg.end_seconds = end_s;
                seg.review_state = ReviewState::Edited;
            }
        }
        debug_assert_eq!(self.state.segments[pos].kind, SegmentKind::Contact);
        self.state.segments = with_ambient(
            &self.signal,
            &self.state.thresholds,
            &self.state.params,
            contacts,
        );
        Ok(())
    }
}

fn check_bounds(
    start_s: f64,
    end_s: f64,
    id: usize,
    contacts: &[ContactSegment],
    duration_s: f64,
    delta_min: f64,
) -> Result<()> {
    if !start_s.is_finite()
        || !end_s.is_finite()
        || start_s < 0.0
        || end_s > duration_s + EPS
        || start_s >= end_s
    {
        return Err(Error::param(
            "start_s,end_s",
            format!("bounds must satisfy 0 <= start < end <= {duration_s}"),
        ));
    }
    if end_s - start_s < delta_min - EPS {
        return Err(Error::Conflict(format!(
            "delta_min violation: segment length {:.3} s is below the minimum {delta_min} s",
            end_s - start_s
        )));
    }
    for (j, other) in contacts.iter().enumerate() {
        if j != id && start_s < other.end_seconds - EPS && end_s > other.start_seconds + EPS {
            return Err(Error::Conflict(format!(
                "overlap violation: [{start_s}, {end_s}] overlaps segment {j} [{}, {}]",
                other.start_seconds, other.end_seconds
            )));
        }
    }
    Ok(())
}

/// Contact segments plus ambient intervals mined around them, sorted.
fn with_ambient(
    signal: &TrialSignal,
    thresholds: &Thresholds,
    p: &SegmentationParams,
    mut contacts: Vec<ContactSegment>,
) -> Vec<ContactSegment> {
    let mut ambient = mine_ambient(
        &signal.envelope,
        thresholds,
        &contacts,
        p.min_ambient_seconds,
    );
    for a in ambient.iter_mut() {
        a.end_seconds = a.end_seconds.min(signal.duration_s);
    }
    ambient.retain(|a| a.duration() >= p.min_ambient_seconds - EPS);
    contacts.extend(ambient);
    contacts.sort_by(|a, b| a.start_seconds.total_cmp(&b.start_seconds));
    contacts
}

/// Segment document for `p`, computed from a cached envelope. Matches
/// [`crate::workspace::segment_recording`] on the same audio.
pub fn resegment(
    signal: &TrialSignal,
    trial_id: &str,
    declared: ContactClass,
    p: &SegmentationParams,
) -> Result<SegmentDocument> {
    p.validate()?;
    let seg = segment_envelope(signal.envelope.clone(), signal.duration_s, p)?;
    Ok(SegmentDocument::new(trial_id, p, &seg, Some(declared)))
}

fn read_snapshot(path: &Path) -> Result<Option<SessionState>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
    Ok(Some(
        serde_json::from_str(&text).map_err(|e| Error::from(e).at(path))?,
    ))
}

/// Parse the log; a torn final line (no trailing newline, unparsable) is
/// truncated away.
fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(|e| Error::from(e).at(path))?;
    let mut reader = BufReader::new(f);
    let mut entries = Vec::new();
    let mut good_len = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            log::warn!("dropping torn trailing entry in {}", path.display());
            OpenOptions::new()
                .write(true)
                .open(path)?
                .set_len(good_len)?;
            break;
        }
        let e: LogEntry =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::from(e).at(path))?;
        entries.push(e);
        good_len += n as u64;
    }
    Ok(entries)
}
