use std::path::PathBuf;

/// Errors produced by the contactsense library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("{what} too short: need at least {min_seconds} s, got {got_seconds} s")]
    TooShort {
        what: &'static str,
        min_seconds: f64,
        got_seconds: f64,
    },

    #[error("clip exceeds frame budget: {frames} frames > {max}")]
    ExceedsFrameBudget { frames: usize, max: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch in slot `{slot}`: expected {expected}, found {found}")]
    DimensionMismatch {
        slot: String,
        expected: usize,
        found: usize,
    },

    #[error("missing embedding slot `{0}`")]
    MissingSlot(String),

    #[error("label {0} out of range")]
    LabelOutOfRange(usize),

    #[error("class `{class}` has {count} samples, need at least {min}")]
    ClassTooSmall {
        class: String,
        count: usize,
        min: usize,
    },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("duration {0} s produced zero samples")]
    ZeroSamples(f64),

    #[error("chunk of {chunk} samples exceeds buffer capacity {capacity}")]
    BufferOverflow { chunk: usize, capacity: usize },

    #[error("window starting at sample {0} is no longer buffered")]
    Evicted(u64),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// The innermost error beneath any attached paths.
    pub fn root(&self) -> &Error {
        match self {
            Error::Path { source, .. } => source.root(),
            e => e,
        }
    }

    /// Attach a file path to an error.
    pub fn at(self, path: impl Into<PathBuf>) -> Self {
        Error::Path {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
