//! Multimodal fusion classifier: embedding slots, built-in encoders, the
//! transformer fusion head, training and prediction.

mod checkpoint;
mod config;
mod embedding;
pub mod encoders;
mod fusion;
mod loss;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, EncoderKind, CHECKPOINT_VERSION};
pub use config::{FusionConfig, TrainConfig};
pub use embedding::{
    read_embedding_records, write_embedding_records, EmbeddingBundle, EmbeddingStore, Slot,
};
pub use fusion::{DropoutKey, FusionModel, ParamEntry};
pub use loss::{cross_entropy, softmax, Logits};
pub use optim::AdamW;
pub use train::{
    evaluate, examples_from_manifest, history_csv, predict, train, write_history_csv, EpochMetrics,
    Evaluation, Example, Prediction, TrainOutcome,
};
