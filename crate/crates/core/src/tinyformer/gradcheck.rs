//! Central finite-difference check of the analytic gradients.
//!
//! The loss is the EDL-weighted cross-entropy summed over a set of flows.
//! Dropout masks are replayed from a fixed seed so the perturbed forward
//! passes see the same masks as the analytic one.

use super::{
    backward, edl_loss_grad, edl_weight, forward, Mode, ModelConfig, ModelError, ModelWeights,
};
use crate::flowcap::FlowRecord;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradTolerance {
    pub eps: f64,
    pub rel: f64,
    /// Absolute differences at or below this always pass.
    pub abs_floor: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            rel: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradReport {
    /// Scalar parameters compared.
    pub checked: usize,
    /// Trainable tensors covered, by name.
    pub tensors: Vec<String>,
    pub mismatches: Vec<GradMismatch>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.checked > 0
    }
}

fn masks_seed(seed: u64, i: usize) -> crate::rng::StreamRng {
    substream(seed, &[i as u64])
}

/// Summed EDL-weighted cross-entropy, dropout masks drawn from `seed`.
pub fn edl_objective(
    w: &ModelWeights<f64>,
    cfg: &ModelConfig,
    flows: &[FlowRecord],
    alpha: f64,
    seed: u64,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (i, f) in flows.iter().enumerate() {
        let label = f
            .label
            .ok_or_else(|| ModelError::LabelMismatch(format!("flow {i} is unlabelled")))?;
        let mut rng = masks_seed(seed, i);
        let t = forward(w, cfg, f, Mode::Train(&mut rng))?;
        total += edl_weight(f.valid_len(), alpha) * -t.probs[label].ln();
    }
    Ok(total)
}

/// Gradient of [`edl_objective`] by backpropagation.
pub fn edl_gradient(
    w: &ModelWeights<f64>,
    cfg: &ModelConfig,
    flows: &[FlowRecord],
    alpha: f64,
    seed: u64,
) -> Result<ModelWeights<f64>, ModelError> {
    let mut g = w.zeros_like();
    for (i, f) in flows.iter().enumerate() {
        let label = f
            .label
            .ok_or_else(|| ModelError::LabelMismatch(format!("flow {i} is unlabelled")))?;
        let mut rng = masks_seed(seed, i);
        let t = forward(w, cfg, f, Mode::Train(&mut rng))?;
        let dl = edl_loss_grad(&t.probs, label, edl_weight(f.valid_len(), alpha));
        backward(w, cfg, &t, &dl, &mut g, false)?;
    }
    Ok(g)
}

/// Compares every trainable scalar's analytic gradient against a central
/// difference.
pub fn check_gradients(
    w: &ModelWeights<f64>,
    cfg: &ModelConfig,
    flows: &[FlowRecord],
    seed: u64,
    tol: GradTolerance,
) -> Result<GradReport, ModelError> {
    const ALPHA: f64 = 0.1;
    let grads = edl_gradient(w, cfg, flows, ALPHA, seed)?;
    let analytic: Vec<Vec<f64>> = grads.trainable().iter().map(|t| t.to_vec()).collect();
    let names: Vec<String> = w
        .tensors()
        .into_iter()
        .filter(|t| t.group.trainable())
        .map(|t| t.name)
        .collect();
    let mut probe = w.clone();
    let mut report = GradReport {
        tensors: names.clone(),
        ..GradReport::default()
    };
    for (ti, an_t) in analytic.iter().enumerate() {
        for (j, &an) in an_t.iter().enumerate() {
            let orig = probe.trainable()[ti][j];
            probe.trainable_mut()[ti][j] = orig + tol.eps;
            let up = edl_objective(&probe, cfg, flows, ALPHA, seed)?;
            probe.trainable_mut()[ti][j] = orig - tol.eps;
            let dn = edl_objective(&probe, cfg, flows, ALPHA, seed)?;
            probe.trainable_mut()[ti][j] = orig;
            let numeric = (up - dn) / (2.0 * tol.eps);
            let err = (numeric - an).abs();
            report.checked += 1;
            if err > tol.abs_floor && err > tol.rel * numeric.abs().max(an.abs()) {
                report.mismatches.push(GradMismatch {
                    tensor: names[ti].clone(),
                    index: j,
                    analytic: an,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
