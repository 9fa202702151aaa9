//! Ensembles and the confidence-threshold evaluation protocol.
//!
//! A flow is revealed one packet at a time; the first prefix whose top-1
//! confidence reaches `τ` decides it. Flows that never get there are decided
//! on their full length. Earliness, top-1 accuracy, FNR, FAR and ERDE are
//! computed from those decisions.

mod metrics;
mod stream;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowcap::{FlowRecord, FlowcapError};
use crate::tinyformer::{predict, ModelConfig, ModelError, ModelWeights, PeFamily};

pub use metrics::{compute_metrics, erde, lc, ErdeCosts, EvalReport};
pub use stream::{PacketStream, StreamEvent};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("flow has no packets")]
    EmptyFlow,
    #[error("test set is empty")]
    EmptyDataset,
    #[error("threshold must satisfy 0 < τ ≤ 1, got {0}")]
    InvalidThreshold(f64),
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("flow `{0}` has no label")]
    Unlabelled(String),
    #[error("label {label} of flow `{flow}` is outside 0..{classes}")]
    LabelOutOfRange {
        flow: String,
        label: usize,
        classes: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flowcap(#[from] FlowcapError),
}

/// Anything that maps a (prefix) flow to a class distribution.
pub trait ConfidenceModel: Sync {
    fn classes(&self) -> usize;
    fn confidences(&self, flow: &FlowRecord) -> Result<Vec<f64>, EvalError>;
}

/// Adapter turning a closure into a [`ConfidenceModel`]; handy for stubs.
pub struct FnModel<F> {
    pub classes: usize,
    pub f: F,
}

impl<F> ConfidenceModel for FnModel<F>
where
    F: Fn(&FlowRecord) -> Vec<f64> + Sync,
{
    fn classes(&self) -> usize {
        self.classes
    }

    fn confidences(&self, flow: &FlowRecord) -> Result<Vec<f64>, EvalError> {
        Ok((self.f)(flow))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Element-wise mean of member softmax outputs.
    #[default]
    Mean,
    /// Fraction of members whose top-1 is each class.
    Majority,
}

#[derive(Debug, Clone)]
pub struct Member {
    pub weights: ModelWeights<f32>,
    pub config: ModelConfig,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<Member>,
    pub aggregation: Aggregation,
}

impl Ensemble {
    pub fn new(members: Vec<Member>, aggregation: Aggregation) -> Result<Self, EvalError> {
        let first = members
            .first()
            .ok_or_else(|| EvalError::InvalidEnsemble("no members".into()))?;
        let family: PeFamily = first.config.pe_kind.family();
        for (i, m) in members.iter().enumerate() {
            let c = &m.config;
            if c.classes != first.config.classes
                || c.d != first.config.d
                || c.max_len != first.config.max_len
            {
                return Err(EvalError::InvalidEnsemble(format!(
                    "member {i} disagrees on classes/d/max_len"
                )));
            }
            if c.pe_kind.family() != family {
                return Err(EvalError::InvalidEnsemble(format!(
                    "member {i} uses {} but member 0 uses {}",
                    c.pe_kind, first.config.pe_kind
                )));
            }
        }
        Ok(Self {
            members,
            aggregation,
        })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn config(&self) -> &ModelConfig {
        &self.members[0].config
    }

    /// Analytic inference footprint in bytes: all member weights plus the
    /// activations of one full-length forward pass (evaluated sequentially).
    pub fn footprint_bytes(&self) -> usize {
        let weights: usize = self.members.iter().map(|m| m.weights.byte_size_f32()).sum();
        let activations = self
            .members
            .iter()
            .map(|m| activation_bytes(&m.config))
            .max()
            .unwrap_or(0);
        weights + activations
    }
}

/// Upper bound on the `f32` activations retained by one forward pass.
pub fn activation_bytes(cfg: &ModelConfig) -> usize {
    let n = cfg.max_len;
    let aw = cfg.attn_width();
    let dm = cfg.d_model;
    let input = n * cfg.d;
    let per_block = n * dm // block input
        + 4 * n * aw // q, k, v, ctx
        + 2 * cfg.heads * n * n // attention weights and dropout mask
        + 6 * n * dm // residual, layer norms and dropout masks
        + 2 * n * cfg.d_ff;
    let head = 2 * dm + 2 * cfg.classes;
    4 * (input + n + cfg.layers * per_block + n * dm + head)
}

impl ConfidenceModel for Ensemble {
    fn classes(&self) -> usize {
        self.config().classes
    }

    fn confidences(&self, flow: &FlowRecord) -> Result<Vec<f64>, EvalError> {
        let c = self.classes();
        let mut out = vec![0.0; c];
        let inv = 1.0 / self.members.len() as f64;
        for m in &self.members {
            let p = predict(&m.weights, &m.config, flow)?;
            match self.aggregation {
                Aggregation::Mean => {
                    for (o, &v) in out.iter_mut().zip(&p) {
                        *o += f64::from(v) * inv;
                    }
                }
                Aggregation::Majority => out[top1(&p).0] += inv,
            }
        }
        Ok(out)
    }
}

/// `(argmax, max)`, first index on ties.
pub fn top1<T: PartialOrd + Copy>(p: &[T]) -> (usize, T) {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    (best, p[best])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub flow_id: String,
    pub label: Option<usize>,
    pub predicted: usize,
    pub confidence: f64,
    /// Packets consumed when the decision was taken.
    pub k: usize,
    pub crossed_threshold: bool,
    pub tau: f64,
}

pub fn check_tau(tau: f64) -> Result<(), EvalError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold(tau))
    }
}

/// Identifier used in decisions and logs: the flow key, or `#index`.
pub fn flow_id(flow: &FlowRecord, index: usize) -> String {
    flow.key
        .map_or_else(|| format!("#{index}"), |k| k.to_string())
}

/// Reveals `flow` one packet at a time and stops at the first prefix whose
/// top-1 confidence is at least `tau`.
pub fn stream_classify<M: ConfidenceModel + ?Sized>(
    model: &M,
    flow: &FlowRecord,
    id: &str,
    tau: f64,
) -> Result<Decision, EvalError> {
    check_tau(tau)?;
    let flow = flow.unpadded();
    let n = flow.rows();
    if n == 0 {
        return Err(EvalError::EmptyFlow);
    }
    for k in 1..=n {
        let p = model.confidences(&flow.prefix(k))?;
        let (predicted, confidence) = top1(&p);
        let crossed = confidence >= tau;
        if crossed || k == n {
            return Ok(Decision {
                flow_id: id.to_string(),
                label: flow.label,
                predicted,
                confidence,
                k,
                crossed_threshold: crossed,
                tau,
            });
        }
    }
    unreachable!("loop returns at k = n")
}

/// Streams every flow (in parallel) and assembles the report.
pub fn evaluate<M: ConfidenceModel + ?Sized>(
    model: &M,
    test_set: &[FlowRecord],
    tau: f64,
    o_list: &[usize],
    benign_class: usize,
    costs: &ErdeCosts,
) -> Result<EvalReport, EvalError> {
    check_tau(tau)?;
    if test_set.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let decisions = test_set
        .par_iter()
        .enumerate()
        .map(|(i, f)| stream_classify(model, f, &flow_id(f, i), tau))
        .collect::<Result<Vec<_>, _>>()?;
    compute_metrics(
        &decisions,
        model.classes(),
        benign_class,
        tau,
        o_list,
        costs,
    )
}
