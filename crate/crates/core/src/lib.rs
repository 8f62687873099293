pub mod audio;
pub mod class;
pub mod dataset;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod model;
pub mod segmentation;
pub mod service;
pub mod stft;
pub mod util;
pub mod workspace;

pub use class::{ContactClass, N_CLASSES};
pub use error::{Error, Result};
