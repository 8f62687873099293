use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{TimedPrediction, TimestampMode};
use crate::class::{ContactClass, N_CLASSES};
use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::segmentation::{ContactSegment, SegmentKind};

pub const TIMELINE_FILE: &str = "timeline.json";
pub const NO_PREDICTION_COLOR: [u8; 3] = [128, 128, 128];
const SEGMENT_CONTACT_COLOR: [u8; 3] = [220, 60, 60];
const SEGMENT_AMBIENT_COLOR: [u8; 3] = [70, 70, 70];
const CURSOR_COLOR: [u8; 3] = [255, 255, 255];

pub fn class_color(c: ContactClass) -> [u8; 3] {
    match c {
        ContactClass::Leaf => [60, 180, 75],
        ContactClass::Twig => [245, 130, 48],
        ContactClass::Trunk => [128, 64, 0],
        ContactClass::Ambient => [100, 149, 237],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub t: f64,
    pub class: ContactClass,
    pub p: f64,
    pub probabilities: [f64; N_CLASSES],
    pub processing_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub window_s: f64,
    pub events: Vec<TimelineEvent>,
    #[serde(default)]
    pub segments: Vec<ContactSegment>,
}

impl Timeline {
    pub fn new(preds: &[TimedPrediction], segments: &[ContactSegment], window_s: f64) -> Self {
        Timeline {
            window_s,
            events: preds
                .iter()
                .map(|p| TimelineEvent {
                    t: p.timestamp_s,
                    class: p.class,
                    p: p.confidence(),
                    probabilities: p.probabilities,
                    processing_latency_ms: p.processing_latency_ms,
                })
                .collect(),
            segments: segments.to_vec(),
        }
    }

    pub fn predictions(&self) -> Vec<TimedPrediction> {
        self.events
            .iter()
            .map(|e| TimedPrediction {
                timestamp_s: e.t,
                class: e.class,
                probabilities: e.probabilities,
                processing_latency_ms: e.processing_latency_ms,
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).at(path))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayParams {
    /// Audio window length of each prediction.
    pub window_s: f64,
    pub timestamp: TimestampMode,
    /// Epoch time of the first audio sample on the frame clock.
    pub audio_start_ns: i64,
    pub strip_height: u32,
}

impl Default for OverlayParams {
    fn default() -> Self {
        OverlayParams {
            window_s: 0.8,
            timestamp: TimestampMode::Midpoint,
            audio_start_ns: 0,
            strip_height: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlaySummary {
    pub timeline: PathBuf,
    pub frames_written: usize,
    pub frames_skipped: usize,
}

fn window_of(p: &TimedPrediction, params: &OverlayParams) -> (f64, f64) {
    let start = match params.timestamp {
        TimestampMode::Midpoint => p.timestamp_s - params.window_s / 2.0,
        TimestampMode::Start => p.timestamp_s,
    };
    (start, start + params.window_s)
}

/// Class of the prediction whose window `[start, end]` contains `t`; when
/// windows overlap, the one with the nearest midpoint (earlier on ties).
pub fn strip_class(
    preds: &[TimedPrediction],
    t: f64,
    params: &OverlayParams,
) -> Option<ContactClass> {
    preds
        .iter()
        .filter_map(|p| {
            let (a, b) = window_of(p, params);
            (a <= t && t <= b).then(|| ((t - (a + b) / 2.0).abs(), p.class))
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, c)| c)
}

fn fill(img: &mut RgbImage, x0: u32, x1: u32, y0: u32, y1: u32, color: [u8; 3]) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, Rgb(color));
        }
    }
}

fn annotate(
    frame: &RgbImage,
    t: f64,
    duration: f64,
    preds: &[TimedPrediction],
    segments: &[ContactSegment],
    params: &OverlayParams,
) -> RgbImage {
    let (w, h) = frame.dimensions();
    let strip = params.strip_height.max(6);
    let mut out = RgbImage::from_pixel(w, h + strip, Rgb(NO_PREDICTION_COLOR));
    image::imageops::replace(&mut out, frame, 0, 0);
    let seg_rows = (h, h + 2);
    let bar_rows = (h + 2, h + strip / 2);
    let to_time = |x: u32| (x as f64 + 0.5) / w as f64 * duration;
    for x in 0..w {
        let tx = to_time(x);
        let seg = segments
            .iter()
            .find(|s| s.start_seconds <= tx && tx < s.end_seconds);
        let seg_color = match seg.map(|s| s.kind) {
            Some(SegmentKind::Contact) => SEGMENT_CONTACT_COLOR,
            Some(SegmentKind::Ambient) => SEGMENT_AMBIENT_COLOR,
            None => NO_PREDICTION_COLOR,
        };
        fill(&mut out, x, x + 1, seg_rows.0, seg_rows.1, seg_color);
        let c = strip_class(preds, tx, params).map_or(NO_PREDICTION_COLOR, class_color);
        fill(&mut out, x, x + 1, bar_rows.0, bar_rows.1, c);
    }
    if duration > 0.0 {
        let cx = ((t / duration) * w as f64)
            .floor()
            .clamp(0.0, (w - 1) as f64) as u32;
        fill(&mut out, cx, cx + 1, seg_rows.0, bar_rows.1, CURSOR_COLOR);
    }
    let current = strip_class(preds, t, params).map_or(NO_PREDICTION_COLOR, class_color);
    fill(&mut out, 0, w, bar_rows.1, h + strip, current);
    out
}

/// Write `timeline.json` and, for each readable frame, an annotated PNG
/// under `frames/` whose bottom band shows the class at the frame's time.
pub fn overlay_export(
    preds: &[TimedPrediction],
    segments: &[ContactSegment],
    frames: &[Frame],
    params: &OverlayParams,
    out_dir: &Path,
) -> Result<OverlaySummary> {
    if !(params.window_s > 0.0) {
        return Err(Error::param("window_s", "must be positive"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::from(e).at(out_dir))?;
    let timeline = Timeline::new(preds, segments, params.window_s);
    let timeline_path = out_dir.join(TIMELINE_FILE);
    crate::util::atomic_write(
        &timeline_path,
        serde_json::to_string_pretty(&timeline)?.as_bytes(),
    )?;

    let duration = preds
        .iter()
        .map(|p| window_of(p, params).1)
        .chain(segments.iter().map(|s| s.end_seconds))
        .fold(0.0f64, f64::max);
    let mut written = 0;
    let mut skipped = 0;
    if !frames.is_empty() {
        let dir = out_dir.join("frames");
        std::fs::create_dir_all(&dir).map_err(|e| Error::from(e).at(&dir))?;
        for f in frames {
            let img = match image::open(&f.path) {
                Ok(i) => i.to_rgb8(),
                Err(e) => {
                    log::warn!("skipping frame {}: {e}", f.path.display());
                    skipped += 1;
                    continue;
                }
            };
            let t = (f.timestamp_ns - params.audio_start_ns) as f64 * 1e-9;
            let out = annotate(&img, t, duration, preds, segments, params);
            let stem = f
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let path = dir.join(format!("{stem}.png"));
            out.save(&path).map_err(|e| Error::from(e).at(&path))?;
            written += 1;
        }
    }
    Ok(OverlaySummary {
        timeline: timeline_path,
        frames_written: written,
        frames_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(t: f64, class: ContactClass) -> TimedPrediction {
        let mut probabilities = [0.1; N_CLASSES];
        probabilities[class.index()] = 0.7;
        TimedPrediction {
            timestamp_s: t,
            class,
            probabilities,
            processing_latency_ms: 1.25,
        }
    }

    #[test]
    fn membership_is_closed_window() {
        let p = [pred(1.0, ContactClass::Twig)];
        let params = OverlayParams::default();
        assert_eq!(strip_class(&p, 0.6, &params), Some(ContactClass::Twig));
        assert_eq!(strip_class(&p, 1.4, &params), Some(ContactClass::Twig));
        assert_eq!(strip_class(&p, 0.59, &params), None);
        assert_eq!(strip_class(&p, 1.41, &params), None);
    }

    #[test]
    fn overlap_prefers_nearest_midpoint() {
        let p = [
            pred(0.4, ContactClass::Leaf),
            pred(0.9, ContactClass::Trunk),
        ];
        let params = OverlayParams::default();
        assert_eq!(strip_class(&p, 0.6, &params), Some(ContactClass::Leaf));
        assert_eq!(strip_class(&p, 0.7, &params), Some(ContactClass::Trunk));
        assert_eq!(strip_class(&p, 0.65, &params), Some(ContactClass::Leaf));
    }

    #[test]
    fn empty_predictions_write_valid_timeline() {
        let dir = tempfile::tempdir().unwrap();
        let s = overlay_export(&[], &[], &[], &OverlayParams::default(), dir.path()).unwrap();
        let t = Timeline::load(&s.timeline).unwrap();
        assert!(t.events.is_empty());
        assert_eq!(s.frames_written, 0);
    }

    #[test]
    fn timeline_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = vec![
            pred(0.4, ContactClass::Leaf),
            pred(0.9 + 1e-13, ContactClass::Ambient),
        ];
        let segs = vec![ContactSegment::contact(0.1, 0.7)];
        let s = overlay_export(&p, &segs, &[], &OverlayParams::default(), dir.path()).unwrap();
        let t = Timeline::load(&s.timeline).unwrap();
        assert_eq!(t.predictions(), p);
        assert_eq!(t.segments, segs);
        assert_eq!(t.events[0].p, 0.7);
    }
}
