//! Early Detection Loss: cross-entropy weighted by `e^(−α·n)`, where `n` is
//! the number of packets the model saw. Short flows weigh more.

use serde::{Deserialize, Serialize};

use super::{cst, ModelError, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdlConfig {
    /// Decay rate `α` of the length weight.
    pub alpha: f64,
    /// Divide the weighted sum by the sum of weights.
    pub normalize: bool,
}

impl Default for EdlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            normalize: false,
        }
    }
}

pub fn edl_weight(n: usize, alpha: f64) -> f64 {
    (-alpha * n as f64).exp()
}

/// `Σ_i w_i · (−ln conf_i[label_i])`, optionally divided by `Σ_i w_i`.
pub fn edl_loss(
    confidences: &[Vec<f64>],
    labels: &[usize],
    lengths: &[usize],
    cfg: &EdlConfig,
) -> Result<f64, ModelError> {
    if confidences.len() != labels.len() || labels.len() != lengths.len() {
        return Err(ModelError::LabelMismatch(format!(
            "{} confidence vectors, {} labels, {} lengths",
            confidences.len(),
            labels.len(),
            lengths.len()
        )));
    }
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((conf, &label), &n) in confidences.iter().zip(labels).zip(lengths) {
        let p = *conf.get(label).ok_or_else(|| {
            ModelError::LabelMismatch(format!(
                "label {label} out of range for {} classes",
                conf.len()
            ))
        })?;
        let w = edl_weight(n, cfg.alpha);
        total += w * -p.ln();
        wsum += w;
    }
    Ok(if cfg.normalize && wsum > 0.0 {
        total / wsum
    } else {
        total
    })
}

/// Cross-entropy from logits via log-sum-exp, avoiding `ln 0`.
pub fn cross_entropy_logits<T: Real>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    lse - logits[label]
}

/// `∂(w·CE)/∂logits = w·(p − onehot(label))`.
pub fn edl_loss_grad<T: Real>(probs: &[T], label: usize, weight: f64) -> Vec<T> {
    let w = cst::<T>(weight);
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| w * if j == label { p - T::one() } else { p })
        .collect()
}
