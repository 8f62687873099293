//! Percentile-threshold contact segmentation.
//!
//! An amplitude envelope is compared against a contact threshold placed
//! between its noise floor and signal peak percentiles. Runs above the
//! threshold become candidate segments; candidates separated by short gaps
//! are merged, and merged segments shorter than the minimum duration are
//! dropped. Ambient (confident no-contact) intervals are regions where the
//! envelope stays at or below the lower non-contact threshold.

use serde::{Deserialize, Serialize};

use crate::audio::{smoothed_envelope, Envelope, EnvelopeParams, Waveform};
use crate::class::ContactClass;
use crate::error::{Error, Result};

/// Tolerance used when converting second-valued parameters to frame counts.
const FRAME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub alpha_offset: f64,
    pub beta_factor: f64,
    pub delta_min_seconds: f64,
    pub gamma_squeeze_seconds: f64,
    pub noise_percentile: f64,
    pub signal_percentile: f64,
    pub min_ambient_seconds: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            alpha_offset: 0.3,
            beta_factor: 0.75,
            delta_min_seconds: 1.0,
            gamma_squeeze_seconds: 0.5,
            noise_percentile: 10.0,
            signal_percentile: 90.0,
            min_ambient_seconds: 1.0,
        }
    }
}

impl SegmentationParams {
    /// Check every field, reporting all offending field names at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha_offset) {
            bad.push("alpha");
        }
        if !(self.beta_factor > 0.0 && self.beta_factor <= 1.0) {
            bad.push("beta");
        }
        if !(self.delta_min_seconds > 0.0) || !self.delta_min_seconds.is_finite() {
            bad.push("delta_min");
        }
        if !(self.gamma_squeeze_seconds >= 0.0) || !self.gamma_squeeze_seconds.is_finite() {
            bad.push("gamma_squeeze");
        }
        if !(0.0..=100.0).contains(&self.noise_percentile)
            || !(0.0..=100.0).contains(&self.signal_percentile)
            || self.noise_percentile >= self.signal_percentile
        {
            bad.push("percentiles");
        }
        if !(self.min_ambient_seconds > 0.0) || !self.min_ambient_seconds.is_finite() {
            bad.push("min_ambient");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::param(bad.join(","), "out of range"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_contact: f64,
    pub t_noncontact: f64,
    pub f_noise: f64,
    pub f_signal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Contact,
    Ambient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewState {
    Auto,
    Accepted,
    Rejected,
    Edited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSegment {
    #[serde(rename = "start_s")]
    pub start_seconds: f64,
    #[serde(rename = "end_s")]
    pub end_seconds: f64,
    pub kind: SegmentKind,
    pub label: Option<ContactClass>,
    pub review_state: ReviewState,
}

impl ContactSegment {
    pub fn contact(start_seconds: f64, end_seconds: f64) -> Self {
        ContactSegment {
            start_seconds,
            end_seconds,
            kind: SegmentKind::Contact,
            label: None,
            review_state: ReviewState::Auto,
        }
    }

    pub fn ambient(start_seconds: f64, end_seconds: f64) -> Self {
        ContactSegment {
            start_seconds,
            end_seconds,
            kind: SegmentKind::Ambient,
            label: Some(ContactClass::Ambient),
            review_state: ReviewState::Auto,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_seconds - self.start_seconds
    }
}

/// Percentile with linear interpolation between closest ranks
/// (rank = p/100 * (n - 1)).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of empty sequence"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi || frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn compute_thresholds(e: &Envelope, p: &SegmentationParams) -> Result<Thresholds> {
    if e.is_empty() {
        return Err(Error::EmptyInput("envelope"));
    }
    let mut sorted = e.values.clone();
    sorted.sort_by(f64::total_cmp);
    let f_noise = percentile_sorted(&sorted, p.noise_percentile);
    let f_signal = percentile_sorted(&sorted, p.signal_percentile);
    let t_contact = f_noise + (f_signal - f_noise) * p.alpha_offset;
    Ok(Thresholds {
        t_contact,
        t_noncontact: p.beta_factor * t_contact,
        f_noise,
        f_signal,
    })
}

/// Per-frame contact flag: strictly above the contact threshold.
pub fn classify_samples(e: &Envelope, t: &Thresholds) -> Vec<bool> {
    e.values.iter().map(|&v| v > t.t_contact).collect()
}

/// Maximal runs of `true` as half-open frame ranges.
pub(crate) fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (k, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push((s, k));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, mask.len()));
    }
    out
}

fn max_gap_frames(hop: f64, gamma: f64) -> usize {
    (gamma / hop + FRAME_EPS).floor() as usize
}

fn min_len_frames(hop: f64, delta: f64) -> usize {
    (delta / hop - FRAME_EPS).ceil().max(0.0) as usize
}

/// Merge-then-filter in frame units. Returns half-open frame ranges.
pub(crate) fn extract_frame_ranges(
    mask: &[bool],
    hop_seconds: f64,
    p: &SegmentationParams,
) -> Vec<(usize, usize)> {
    let max_gap = max_gap_frames(hop_seconds, p.gamma_squeeze_seconds);
    let min_len = min_len_frames(hop_seconds, p.delta_min_seconds);
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in runs(mask) {
        match merged.last_mut() {
            Some(last) if s - last.1 <= max_gap => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    merged.retain(|&(s, e)| e - s >= min_len);
    merged
}

/// Contact segments from a frame mask: candidate runs are merged across gaps
/// of at most `gamma_squeeze_seconds`, then segments shorter than
/// `delta_min_seconds` are discarded.
pub fn extract_segments(
    mask: &[bool],
    hop_seconds: f64,
    p: &SegmentationParams,
) -> Vec<ContactSegment> {
    extract_frame_ranges(mask, hop_seconds, p)
        .into_iter()
        .map(|(s, e)| ContactSegment::contact(s as f64 * hop_seconds, e as f64 * hop_seconds))
        .collect()
}

/// Maximal intervals outside every contact segment where the envelope stays
/// at or below `t_noncontact`, each at least `min_ambient_seconds` long.
pub fn mine_ambient(
    e: &Envelope,
    t: &Thresholds,
    contact: &[ContactSegment],
    min_ambient_seconds: f64,
) -> Vec<ContactSegment> {
    let hop = e.hop_seconds;
    let quiet: Vec<bool> = e
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let (fs, fe) = (e.time_of(k), e.time_of(k + 1));
            let inside = contact
                .iter()
                .filter(|c| c.kind == SegmentKind::Contact)
                .any(|c| fs < c.end_seconds - FRAME_EPS && fe > c.start_seconds + FRAME_EPS);
            v <= t.t_noncontact && !inside
        })
        .collect();
    let min_len = min_len_frames(hop, min_ambient_seconds);
    runs(&quiet)
        .into_iter()
        .filter(|&(s, e)| e - s >= min_len)
        .map(|(s, end)| ContactSegment::ambient(e.time_of(s), e.time_of(end)))
        .collect()
}

/// Everything produced by segmenting one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSegmentation {
    pub envelope: Envelope,
    pub thresholds: Thresholds,
    pub contact: Vec<ContactSegment>,
    pub ambient: Vec<ContactSegment>,
}

impl TrialSegmentation {
    /// Contact and ambient segments together, sorted by start time.
    pub fn all_segments(&self) -> Vec<ContactSegment> {
        let mut all: Vec<ContactSegment> =
            self.contact.iter().chain(&self.ambient).cloned().collect();
        all.sort_by(|a, b| a.start_seconds.total_cmp(&b.start_seconds));
        all
    }
}

/// Envelope, thresholds, contact segments and ambient segments for one trial.
/// Segment ends are clamped to the trial duration.
pub fn segment_trial(
    w: &Waveform,
    p: &SegmentationParams,
    env: &EnvelopeParams,
) -> Result<TrialSegmentation> {
    p.validate()?;
    let envelope = smoothed_envelope(w, env.window_seconds, env.hop_seconds)?;
    segment_envelope(envelope, w.duration_seconds(), p)
}

/// Segmentation stages after the envelope has been computed.
pub fn segment_envelope(
    envelope: Envelope,
    duration_seconds: f64,
    p: &SegmentationParams,
) -> Result<TrialSegmentation> {
    let thresholds = compute_thresholds(&envelope, p)?;
    let mask = classify_samples(&envelope, &thresholds);
    let mut contact = extract_segments(&mask, envelope.hop_seconds, p);
    clamp_to_duration(&mut contact, duration_seconds, p.delta_min_seconds);
    let mut ambient = mine_ambient(&envelope, &thresholds, &contact, p.min_ambient_seconds);
    clamp_to_duration(&mut ambient, duration_seconds, p.min_ambient_seconds);
    Ok(TrialSegmentation {
        envelope,
        thresholds,
        contact,
        ambient,
    })
}

fn clamp_to_duration(segments: &mut Vec<ContactSegment>, duration: f64, min_len: f64) {
    for s in segments.iter_mut() {
        s.end_seconds = s.end_seconds.min(duration);
    }
    segments.retain(|s| s.duration() >= min_len - FRAME_EPS);
}

/// Parameter block of the per-trial segment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub alpha: f64,
    pub beta: f64,
    pub delta_min: f64,
    pub gamma_squeeze: f64,
    pub percentiles: [f64; 2],
    #[serde(default = "default_min_ambient")]
    pub min_ambient: f64,
}

fn default_min_ambient() -> f64 {
    SegmentationParams::default().min_ambient_seconds
}

impl From<&SegmentationParams> for ParamsRecord {
    fn from(p: &SegmentationParams) -> Self {
        ParamsRecord {
            alpha: p.alpha_offset,
            beta: p.beta_factor,
            delta_min: p.delta_min_seconds,
            gamma_squeeze: p.gamma_squeeze_seconds,
            percentiles: [p.noise_percentile, p.signal_percentile],
            min_ambient: p.min_ambient_seconds,
        }
    }
}

impl From<&ParamsRecord> for SegmentationParams {
    fn from(r: &ParamsRecord) -> Self {
        SegmentationParams {
            alpha_offset: r.alpha,
            beta_factor: r.beta,
            delta_min_seconds: r.delta_min,
            gamma_squeeze_seconds: r.gamma_squeeze,
            noise_percentile: r.percentiles[0],
            signal_percentile: r.percentiles[1],
            min_ambient_seconds: r.min_ambient,
        }
    }
}

/// The per-trial segment file shared by the CLI, the review service and the
/// dataset builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDocument {
    pub trial_id: String,
    pub params: ParamsRecord,
    pub thresholds: Thresholds,
    pub segments: Vec<ContactSegment>,
}

impl SegmentDocument {
    /// Build the document for a trial; contact segments get `label`.
    pub fn new(
        trial_id: &str,
        p: &SegmentationParams,
        seg: &TrialSegmentation,
        label: Option<ContactClass>,
    ) -> Self {
        let mut segments = seg.all_segments();
        for s in segments
            .iter_mut()
            .filter(|s| s.kind == SegmentKind::Contact)
        {
            s.label = label;
        }
        SegmentDocument {
            trial_id: trial_id.to_string(),
            params: ParamsRecord::from(p),
            thresholds: seg.thresholds,
            segments,
        }
    }

    pub fn params(&self) -> SegmentationParams {
        SegmentationParams::from(&self.params)
    }

    pub fn contact(&self) -> impl Iterator<Item = &ContactSegment> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Contact)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Check ordering, disjointness and contact duration invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let p = self.params();
        for w in self.segments.windows(2) {
            if w[1].start_seconds < w[0].end_seconds - FRAME_EPS {
                return Err(Error::Conflict(format!(
                    "segments [{}, {}] and [{}, {}] overlap or are out of order",
                    w[0].start_seconds, w[0].end_seconds, w[1].start_seconds, w[1].end_seconds
                )));
            }
        }
        for s in self.contact() {
            if s.review_state != ReviewState::Rejected
                && s.duration() < p.delta_min_seconds - FRAME_EPS
            {
                return Err(Error::Conflict(format!(
                    "contact segment [{}, {}] shorter than delta_min {}",
                    s.start_seconds, s.end_seconds, p.delta_min_seconds
                )));
            }
        }
        Ok(())
    }
}
