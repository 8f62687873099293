use serde::{Deserialize, Serialize};

use super::embedding::Slot;
use crate::class::N_CLASSES;
use crate::error::{Error, Result};

/// Shape of the fusion encoder and classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hidden width of the encoder feed-forward blocks and the head.
    pub mlp_hidden: usize,
    pub dropout_rate: f64,
    pub n_classes: usize,
    pub use_cls_token: bool,
    /// Embedding slots that become tokens, in token order.
    pub slots: Vec<Slot>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            mlp_hidden: 256,
            dropout_rate: 0.1,
            n_classes: N_CLASSES,
            use_cls_token: true,
            slots: Slot::ALL.to_vec(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::param(
                "d_model",
                "must be a positive multiple of n_heads",
            ));
        }
        if self.n_classes != N_CLASSES {
            return Err(Error::param("n_classes", format!("must be {N_CLASSES}")));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::param("mlp_hidden", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::param("dropout_rate", "must be in [0, 1)"));
        }
        if self.slots.is_empty() {
            return Err(Error::param("slots", "at least one slot is required"));
        }
        let mut seen = self.slots.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.slots.len() {
            return Err(Error::param("slots", "duplicate slot"));
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.slots.len() + usize::from(self.use_cls_token)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    /// Stop after this many epochs without a better validation macro-F1.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            max_epochs: 50,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::param("max_epochs", "must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::param("learning_rate", "must be >= 0"));
        }
        Ok(())
    }
}
