use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FusionConfig, TrainConfig};
use super::embedding::{EmbeddingBundle, EmbeddingStore, Slot};
use super::fusion::{DropoutKey, FusionModel};
use super::loss::{cross_entropy, softmax, Logits};
use super::optim::AdamW;
use crate::class::{ContactClass, N_CLASSES};
use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, ConfusionMatrix, MetricReport};

/// One labeled training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub bundle: EmbeddingBundle,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation macro-F1.
    pub best: FusionModel,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub history: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: ContactClass,
    pub probabilities: [f64; N_CLASSES],
}

impl Prediction {
    pub fn from_logits(z: &Logits) -> Self {
        let probabilities = softmax(z);
        let best = (0..N_CLASSES)
            .max_by(|&a, &b| {
                probabilities[a]
                    .total_cmp(&probabilities[b])
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        Prediction {
            class: ContactClass::from_index(best).expect("class index"),
            probabilities,
        }
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (epoch as u64).wrapping_add(0xa076_1d64_78bd_642f)
}

/// Train with AdamW on `train`, selecting the best epoch on `val`.
pub fn train(
    train: &[Example],
    val: &[Example],
    fc: &FusionConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    let mut model = FusionModel::new(fc.clone(), tc.seed)?;
    let mut opt = AdamW::new(model.n_params(), tc);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=tc.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(tc.seed, epoch));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(tc.batch_size).enumerate() {
            let bundles: Vec<EmbeddingBundle> =
                chunk.iter().map(|&i| train[i].bundle.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let key = DropoutKey {
                seed: tc.seed,
                epoch: epoch as u64,
                step: step as u64,
            };
            let (loss, grad) = model.loss_and_grad(&bundles, &labels, Some(key))?;
            loss_sum += loss * chunk.len() as f64;
            let next = opt.step(model.params(), &grad);
            model.set_params(&next)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let ev = evaluate(&model, val)?;
        let row = EpochMetrics {
            epoch,
            train_loss,
            val_f1: ev.report.macro_f1,
            val_loss: ev.loss,
        };
        log::info!(
            "epoch {epoch}: train_loss={train_loss:.5} val_loss={:.5} val_f1={:.4}",
            row.val_loss,
            row.val_f1
        );
        history.push(row);
        if row.val_f1 > best_f1 {
            best_f1 = row.val_f1;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.early_stop_patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_f1: best_f1,
        history,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub report: MetricReport,
    pub loss: f64,
}

/// Eval-mode metrics and mean cross-entropy over `examples`.
pub fn evaluate(model: &FusionModel, examples: &[Example]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let mut logits = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(64) {
        let b: Vec<EmbeddingBundle> = chunk.iter().map(|e| e.bundle.clone()).collect();
        logits.extend(model.logits(&b)?);
    }
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (loss, _) = cross_entropy(&logits, &labels)?;
    let predictions: Vec<usize> = logits
        .iter()
        .map(|z| Prediction::from_logits(z).class.index())
        .collect();
    let cm = confusion(&predictions, &labels)?;
    Ok(Evaluation {
        report: metrics(&cm)?,
        confusion: cm,
        predictions,
        loss,
    })
}

/// Examples for the `split` samples of a manifest. Samples without a paired
/// frame get the built-in encoder's empty-image embedding when `slots`
/// includes the image slot; any other missing slot is an error.
pub fn examples_from_manifest(
    manifest: &Manifest,
    store: &EmbeddingStore,
    split: Split,
    slots: &[Slot],
) -> Result<Vec<Example>> {
    manifest
        .split(split)
        .map(|r| {
            let mut bundle = store.bundle(&r.sample_id);
            if slots.contains(&Slot::Image)
                && bundle.get(Slot::Image).is_none()
                && r.image_ref.is_none()
            {
                bundle.set(Slot::Image, super::encoders::image_bias().to_vec());
            }
            bundle
                .validate(slots)
                .map_err(|e| Error::param(r.sample_id.clone(), e.to_string()))?;
            Ok(Example {
                bundle,
                label: r.label.index(),
            })
        })
        .collect()
}

pub fn predict(model: &FusionModel, bundle: &EmbeddingBundle) -> Result<Prediction> {
    let z = model.logits(std::slice::from_ref(bundle))?;
    Ok(Prediction::from_logits(&z[0]))
}

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,val_f1,val_loss\n");
    for m in history {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            m.epoch, m.train_loss, m.val_f1, m.val_loss
        );
    }
    s
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochMetrics]) -> Result<()> {
    crate::util::atomic_write(path.as_ref(), history_csv(history).as_bytes())
}
