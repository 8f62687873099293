//! Labeled window dataset: trial layout, window tiling, frame pairing,
//! group-aware splitting, tensor files and the JSONL manifest.

mod build;
pub mod image;
mod manifest;
mod split;
pub mod tensor;
mod trial;
mod window;

pub use build::{
    build_dataset, image_path, mel_path, AugmentSpec, DatasetParams, SplitPolicy, TrialInput,
    EMBEDDINGS_DIR, IMAGES_DIR, MANIFEST_FILE, MELS_DIR,
};
pub use image::{load_and_preprocess, preprocess, CropSpec};
pub use manifest::{
    ClassCounts, ImageRef, Manifest, ManifestHeader, SampleRecord, Split, FLAG_AUGMENTED,
    FLAG_IMAGE_MISSING, SCHEMA_VERSION,
};
pub use split::{stratified_split, MIN_SAMPLES_PER_CLASS};
pub use tensor::{read_tensor, write_tensor};
pub use trial::{
    audio_path, discover_trials, list_frames, load_working_audio, Embodiment, Frame, TrialMeta,
    TrialRecording, DENOISED_AUDIO, FRAMES_DIR, TRIAL_AUDIO, TRIAL_META,
};
pub use window::{pair_frame, window_count, window_segments, WindowSpec, MAX_FRAME_OFFSET_NS};
