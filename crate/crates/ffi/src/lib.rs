//! C ABI for contactsense segmentation and streaming classification.
//!
//! Every fallible function returns a [`CsStatus`]. On failure the message
//! is available from [`cs_last_error_message`] on the same thread until the
//! next failing call. Handles are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use contactsense::audio::{Envelope, EnvelopeParams, Waveform, WORKING_RATE};
use contactsense::inference::{StreamClassifier, StreamConfig, TimedPrediction, WindowClassifier};
use contactsense::model::Checkpoint;
use contactsense::segmentation::{
    segment_envelope, segment_trial, ContactSegment, SegmentationParams, TrialSegmentation,
};
use contactsense::{ContactClass, Error, N_CLASSES};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Io = 3,
    Format = 4,
    NotFound = 5,
    Conflict = 6,
    OutOfRange = 7,
    BufferOverflow = 8,
    Panic = 9,
    Other = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsSegmentKind {
    Contact = 0,
    Ambient = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsSegmentationParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta_min_s: f64,
    pub gamma_squeeze_s: f64,
    pub noise_percentile: f64,
    pub signal_percentile: f64,
    pub min_ambient_s: f64,
}

impl From<SegmentationParams> for CsSegmentationParams {
    fn from(p: SegmentationParams) -> Self {
        CsSegmentationParams {
            alpha: p.alpha_offset,
            beta: p.beta_factor,
            delta_min_s: p.delta_min_seconds,
            gamma_squeeze_s: p.gamma_squeeze_seconds,
            noise_percentile: p.noise_percentile,
            signal_percentile: p.signal_percentile,
            min_ambient_s: p.min_ambient_seconds,
        }
    }
}

impl From<CsSegmentationParams> for SegmentationParams {
    fn from(p: CsSegmentationParams) -> Self {
        SegmentationParams {
            alpha_offset: p.alpha,
            beta_factor: p.beta,
            delta_min_seconds: p.delta_min_s,
            gamma_squeeze_seconds: p.gamma_squeeze_s,
            noise_percentile: p.noise_percentile,
            signal_percentile: p.signal_percentile,
            min_ambient_seconds: p.min_ambient_s,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsThresholds {
    pub t_contact: f64,
    pub t_noncontact: f64,
    pub f_noise: f64,
    pub f_signal: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub kind: CsSegmentKind,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsPrediction {
    pub timestamp_s: f64,
    /// Index into leaf, twig, trunk, ambient; see `cs_class_name`.
    pub class_index: u32,
    pub probabilities: [f64; 4],
    pub latency_ms: f64,
}

impl From<&TimedPrediction> for CsPrediction {
    fn from(p: &TimedPrediction) -> Self {
        CsPrediction {
            timestamp_s: p.timestamp_s,
            class_index: p.class.index() as u32,
            probabilities: p.probabilities,
            latency_ms: p.processing_latency_ms,
        }
    }
}

/// Result of segmenting one recording.
pub struct CsSegmentation {
    inner: TrialSegmentation,
}

/// Sliding-window classifier fed with 16 kHz samples.
pub struct CsClassifier {
    stream: StreamClassifier,
    pending: VecDeque<CsPrediction>,
}

const _: () = assert!(N_CLASSES == 4);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::InvalidParameter { .. }
            | Error::EmptyInput(_)
            | Error::TooShort { .. }
            | Error::SampleRateMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::DimensionMismatch { .. }
            | Error::ExceedsFrameBudget { .. } => CsStatus::InvalidParameter,
            Error::Io(_) => CsStatus::Io,
            Error::Format { .. } | Error::Json(_) | Error::Wav(_) | Error::Image(_) => {
                CsStatus::Format
            }
            Error::CheckpointMismatch(_) => CsStatus::Format,
            Error::NotFound(_) | Error::MissingSlot(_) => CsStatus::NotFound,
            Error::Conflict(_) => CsStatus::Conflict,
            Error::BufferOverflow { .. } | Error::Evicted(_) => CsStatus::BufferOverflow,
            Error::LabelOutOfRange(_) => CsStatus::OutOfRange,
            _ => CsStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CsStatus::NullPointer, format!("`{what}` is null"))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            CsStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

unsafe fn params_or_default(p: *const CsSegmentationParams) -> SegmentationParams {
    p.as_ref().map(|p| (*p).into()).unwrap_or_default()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Static name of class `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn cs_class_name(index: u32) -> *const c_char {
    match ContactClass::from_index(index as usize) {
        Some(ContactClass::Leaf) => c"leaf".as_ptr(),
        Some(ContactClass::Twig) => c"twig".as_ptr(),
        Some(ContactClass::Trunk) => c"trunk".as_ptr(),
        Some(ContactClass::Ambient) => c"ambient".as_ptr(),
        None => std::ptr::null(),
    }
}

#[no_mangle]
pub extern "C" fn cs_segmentation_params_default() -> CsSegmentationParams {
    SegmentationParams::default().into()
}

/// Validate `params`, naming every offending field in the error message.
///
/// # Safety
/// `params` must be null or point to a valid struct.
#[no_mangle]
pub unsafe extern "C" fn cs_segmentation_params_validate(
    params: *const CsSegmentationParams,
) -> CsStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        SegmentationParams::from(*p).validate()?;
        Ok(())
    })
}

/// Segment `n` mono samples at `sample_rate`. Null `params` means defaults.
///
/// # Safety
/// `samples` must point to `n` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_segment_samples(
    samples: *const f32,
    n: usize,
    sample_rate: u32,
    params: *const CsSegmentationParams,
    out_handle: *mut *mut CsSegmentation,
) -> CsStatus {
    guard(|| {
        let dst = out(out_handle, "out_handle")?;
        let s = slice(samples, n, "samples")?;
        let w = Waveform::from_f32(s, sample_rate)?;
        let inner = segment_trial(&w, &params_or_default(params), &EnvelopeParams::default())?;
        *dst = Box::into_raw(Box::new(CsSegmentation { inner }));
        Ok(())
    })
}

/// Segment a precomputed envelope of `n` frames spaced `hop_s` apart.
/// Segment ends are clamped to `duration_s`.
///
/// # Safety
/// `values` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_segment_envelope(
    values: *const f64,
    n: usize,
    hop_s: f64,
    duration_s: f64,
    params: *const CsSegmentationParams,
    out_handle: *mut *mut CsSegmentation,
) -> CsStatus {
    guard(|| {
        let dst = out(out_handle, "out_handle")?;
        let v = slice(values, n, "values")?;
        if !(hop_s > 0.0) || !hop_s.is_finite() {
            return Err(Error::InvalidParameter {
                field: "hop_s".into(),
                reason: "must be positive".into(),
            }
            .into());
        }
        let p = params_or_default(params);
        p.validate()?;
        let inner = segment_envelope(Envelope::new(v.to_vec(), hop_s), duration_s, &p)?;
        *dst = Box::into_raw(Box::new(CsSegmentation { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_segmentation_thresholds(
    h: *const CsSegmentation,
    out_thresholds: *mut CsThresholds,
) -> CsStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("h"))?;
        let t = h.inner.thresholds;
        *out(out_thresholds, "out_thresholds")? = CsThresholds {
            t_contact: t.t_contact,
            t_noncontact: t.t_noncontact,
            f_noise: t.f_noise,
            f_signal: t.f_signal,
        };
        Ok(())
    })
}

fn segments(h: &CsSegmentation, kind: CsSegmentKind) -> &[ContactSegment] {
    match kind {
        CsSegmentKind::Contact => &h.inner.contact,
        CsSegmentKind::Ambient => &h.inner.ambient,
    }
}

/// Number of segments of `kind`; 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_segmentation_count(
    h: *const CsSegmentation,
    kind: CsSegmentKind,
) -> usize {
    h.as_ref().map_or(0, |h| segments(h, kind).len())
}

/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_segmentation_get(
    h: *const CsSegmentation,
    kind: CsSegmentKind,
    index: usize,
    out_segment: *mut CsSegment,
) -> CsStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("h"))?;
        let all = segments(h, kind);
        let s = all.get(index).ok_or_else(|| {
            Failure(
                CsStatus::OutOfRange,
                format!("segment {index} out of range ({} available)", all.len()),
            )
        })?;
        *out(out_segment, "out_segment")? = CsSegment {
            start_s: s.start_seconds,
            end_s: s.end_seconds,
            kind,
        };
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_segmentation_free(h: *mut CsSegmentation) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Open a checkpoint for streaming with the default window and stride.
/// `max_chunk` bounds the samples accepted per push.
///
/// # Safety
/// `checkpoint_path` must be a NUL-terminated UTF-8 path; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_classifier_open(
    checkpoint_path: *const c_char,
    max_chunk: usize,
    out_handle: *mut *mut CsClassifier,
) -> CsStatus {
    guard(|| {
        let dst = out(out_handle, "out_handle")?;
        if checkpoint_path.is_null() {
            return Err(null("checkpoint_path"));
        }
        let path = CStr::from_ptr(checkpoint_path).to_str().map_err(|_| {
            Failure(
                CsStatus::InvalidParameter,
                "checkpoint_path is not UTF-8".into(),
            )
        })?;
        let path = PathBuf::from(path);
        let ck = Checkpoint::load(&path).map_err(|e| e.at(&path))?;
        let classifier = WindowClassifier::from_checkpoint(ck, StreamConfig::default())?;
        let stream = StreamClassifier::new(classifier, max_chunk)?;
        *dst = Box::into_raw(Box::new(CsClassifier {
            stream,
            pending: VecDeque::new(),
        }));
        Ok(())
    })
}

/// Sample rate expected by `cs_classifier_push`.
#[no_mangle]
pub extern "C" fn cs_classifier_sample_rate() -> u32 {
    WORKING_RATE
}

/// Append `n` samples; windows that became ready are classified and queued.
/// `out_pending` (optional) receives the queue length.
///
/// # Safety
/// `h` must be a live handle; `samples` must point to `n` floats.
#[no_mangle]
pub unsafe extern "C" fn cs_classifier_push(
    h: *mut CsClassifier,
    samples: *const f32,
    n: usize,
    out_pending: *mut usize,
) -> CsStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| null("h"))?;
        let s = slice(samples, n, "samples")?;
        let chunk: Vec<f64> = s.iter().map(|&x| x as f64).collect();
        for p in h.stream.push(&chunk)? {
            h.pending.push_back((&p).into());
        }
        if let Some(o) = out_pending.as_mut() {
            *o = h.pending.len();
        }
        Ok(())
    })
}

/// Pop the oldest queued prediction; `OutOfRange` when the queue is empty.
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_classifier_pop(
    h: *mut CsClassifier,
    out_prediction: *mut CsPrediction,
) -> CsStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| null("h"))?;
        let dst = out(out_prediction, "out_prediction")?;
        *dst = h
            .pending
            .pop_front()
            .ok_or_else(|| Failure(CsStatus::OutOfRange, "no pending predictions".into()))?;
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_classifier_free(h: *mut CsClassifier) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
