//! Model-ready audio representations: fixed-size log-mel spectrograms,
//! scalar clip descriptors and training-time augmentation.

mod augment;
pub mod mel;
mod scalar;

pub use augment::{AugmentParams, Augmenter, Range};
pub use mel::{log_mel_frames, mel_spectrogram, MelSpectrogram, MEL_VERSION, N_FRAMES, N_MELS};
pub use scalar::{
    dct2_ortho, extract_features, feature_csv_header, mfcc, rms, spectral_centroid,
    write_feature_csv, zero_crossing_rate, FeatureRow, FeatureVector, N_MFCC,
};
