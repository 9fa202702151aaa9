//! Mini-batch training with on-the-fly augmentation.
//!
//! Every random draw comes from a sub-stream of `TrainConfig::seed`:
//! augmentation is keyed by `(epoch, sample)`, the shuffle by epoch and
//! dropout by `(epoch, sample)`, so the result does not depend on thread
//! count or on the order in which samples are augmented.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy_logits;
use super::{backward, edl_loss_grad, edl_weight, forward, Adam, AdamConfig, EdlConfig, Mode};
use super::{ModelConfig, ModelError, ModelWeights};
use crate::augment::{augment_pipeline, AugConfig, SampleKey};
use crate::flowcap::FlowRecord;
use crate::rng::substream;

const SHUFFLE_STREAM: u64 = 0x5348;
const DROPOUT_STREAM: u64 = 0x4452;
const AUGMENT_STREAM: u64 = 0x4147;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub edl: EdlConfig,
    pub seed: u64,
    /// Apply the augmentation pipeline each epoch.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            adam: AdamConfig::default(),
            edl: EdlConfig::default(),
            seed: 0,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean EDL over batches.
    pub loss: f64,
    /// Fraction of training samples classified correctly during the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub weights: ModelWeights<f32>,
    pub history: Vec<EpochStats>,
}

/// Trains a freshly initialised model on `samples`, which should already be
/// the (sub)flow set after oversampling. Labels are required.
pub fn train(
    samples: &[Arc<FlowRecord>],
    model_cfg: &ModelConfig,
    aug_cfg: &AugConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput, ModelError> {
    model_cfg.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch_size must be >= 1".into()));
    }
    aug_cfg
        .validate()
        .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    let mut labels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        match s.label {
            Some(l) if l < model_cfg.classes => labels.push(l),
            Some(l) => {
                return Err(ModelError::LabelMismatch(format!(
                    "sample {i} has label {l} but the model has {} classes",
                    model_cfg.classes
                )))
            }
            None => {
                return Err(ModelError::LabelMismatch(format!(
                    "sample {i} is unlabelled"
                )))
            }
        }
    }

    let mut weights = ModelWeights::<f32>::init(model_cfg, cfg.seed);
    let mut opt = Adam::new(cfg.adam, &weights);
    let mut history = Vec::with_capacity(cfg.epochs);
    let aug_seed = crate::rng::derive_seed(cfg.seed, &[AUGMENT_STREAM]);

    for epoch in 0..cfg.epochs {
        let view: Vec<FlowRecord> = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                if cfg.augment {
                    let key = SampleKey {
                        seed: aug_seed,
                        epoch: epoch as u64,
                        sample: i as u64,
                    };
                    augment_pipeline(s, aug_cfg, model_cfg.max_len, key)
                } else {
                    s.unpadded()
                }
            })
            .collect();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut substream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        let mut grads = weights.zeros_like();
        for batch in order.chunks(cfg.batch_size) {
            for t in grads.trainable_mut() {
                t.fill(0.0);
            }
            let ws: Vec<f64> = batch
                .iter()
                .map(|&i| edl_weight(view[i].valid_len(), cfg.edl.alpha))
                .collect();
            let norm = if cfg.edl.normalize {
                ws.iter().sum::<f64>()
            } else {
                1.0
            };
            let mut batch_loss = 0.0;
            for (&i, &w) in batch.iter().zip(&ws) {
                let mut rng = substream(cfg.seed, &[DROPOUT_STREAM, epoch as u64, i as u64]);
                let trace = forward(&weights, model_cfg, &view[i], Mode::Train(&mut rng))?;
                let label = labels[i];
                batch_loss += w / norm * f64::from(cross_entropy_logits(&trace.logits, label));
                let pred = argmax(&trace.probs);
                correct += usize::from(pred == label);
                let dlogits = edl_loss_grad(&trace.probs, label, w / norm);
                backward(&weights, model_cfg, &trace, &dlogits, &mut grads, false)?;
            }
            opt.step(&mut weights, &grads);
            if !weights.all_finite() {
                return Err(ModelError::NonFiniteActivation(format!(
                    "weights after epoch {epoch}"
                )));
            }
            loss_sum += batch_loss;
            batches += 1;
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / samples.len() as f64,
        });
    }
    Ok(TrainOutput { weights, history })
}

pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
