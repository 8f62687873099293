use crate::class::ContactClass;
use crate::error::{Error, Result};
use crate::segmentation::{ContactSegment, ReviewState, SegmentKind};

use super::trial::Frame;

const EPS: f64 = 1e-9;

/// Largest distance between a window midpoint and its paired frame.
pub const MAX_FRAME_OFFSET_NS: i64 = 500_000_000;

/// One training window inside a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub segment_index: usize,
    pub window_index: usize,
    pub start_s: f64,
    pub len_s: f64,
    pub label: ContactClass,
}

/// Number of windows of `len` at `stride` that fit in `duration`;
/// partial tail windows are dropped.
pub fn window_count(duration: f64, len: f64, stride: f64) -> usize {
    if duration + EPS < len {
        0
    } else {
        ((duration - len) / stride + EPS).floor() as usize + 1
    }
}

/// Tile every non-rejected segment. Contact windows take the segment's
/// label, falling back to `declared`; ambient windows are ambient.
pub fn window_segments(
    segments: &[ContactSegment],
    declared: ContactClass,
    len_s: f64,
    stride_s: f64,
) -> Result<Vec<WindowSpec>> {
    if !(len_s > 0.0) {
        return Err(Error::param("window_len_s", "must be positive"));
    }
    if !(stride_s > 0.0) {
        return Err(Error::param("stride_s", "must be positive"));
    }
    let mut out = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        if seg.review_state == ReviewState::Rejected {
            continue;
        }
        let label = match seg.kind {
            SegmentKind::Contact => seg.label.filter(|l| l.is_contact()).unwrap_or(declared),
            SegmentKind::Ambient => ContactClass::Ambient,
        };
        for k in 0..window_count(seg.duration(), len_s, stride_s) {
            out.push(WindowSpec {
                segment_index: si,
                window_index: k,
                start_s: seg.start_seconds + k as f64 * stride_s,
                len_s,
                label,
            });
        }
    }
    Ok(out)
}

/// Frame nearest the window midpoint (ties go to the earlier frame), or
/// `None` when no frame lies within half a second.
pub fn pair_frame(
    frames: &[Frame],
    audio_start_ns: i64,
    start_s: f64,
    len_s: f64,
) -> Option<&Frame> {
    let mid = audio_start_ns + ((start_s + len_s / 2.0) * 1e9).round() as i64;
    let i = frames.partition_point(|f| f.timestamp_ns < mid);
    let before = i.checked_sub(1).map(|j| &frames[j]);
    let after = frames.get(i);
    let best = match (before, after) {
        (Some(b), Some(a)) => {
            if mid - b.timestamp_ns <= a.timestamp_ns - mid {
                b
            } else {
                a
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => return None,
    };
    ((best.timestamp_ns - mid).abs() <= MAX_FRAME_OFFSET_NS).then_some(best)
}
