//! Packet-by-packet replay with per-flow prefix state.
//!
//! Flow identification, truncation, filtering and preprocessing follow
//! [`crate::flowcap::prepare_packets`] exactly, so replaying a capture gives
//! the same decisions as batch evaluation of the prepared dataset.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use indexmap::IndexMap;

use super::{check_tau, top1, ConfidenceModel, Decision, EvalError};
use crate::flowcap::Ipv4Summary;
use crate::flowcap::{
    preprocess_packet, FlowKey, FlowRecord, FlowcapError, Packet, PrepConfig, SkipCounts,
    TimestampPolicy,
};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    pub decision: Decision,
    /// Capture time (seconds) of the packet that completed the decision;
    /// for flows flushed at end of capture, their last packet.
    pub capture_ts: f64,
    /// Wall time of the model evaluation that produced the decision.
    pub latency: Duration,
}

#[derive(Debug, Default)]
struct FlowState {
    raw_seen: usize,
    first_ns: u64,
    prev_ns: u64,
    last_capture_ts: f64,
    packets: Vec<f32>,
    timestamps: Vec<f64>,
    decided: bool,
}

pub struct PacketStream<'a, M: ?Sized> {
    model: &'a M,
    cfg: PrepConfig,
    tau: f64,
    flows: IndexMap<FlowKey, FlowState>,
    labels: HashMap<FlowKey, usize>,
    default_label: Option<usize>,
    pub skipped: SkipCounts,
    pub filtered_out: usize,
    /// Wall time of every model evaluation so far.
    pub forward_times: Vec<Duration>,
}

impl<'a, M: ConfidenceModel + ?Sized> PacketStream<'a, M> {
    pub fn new(model: &'a M, cfg: PrepConfig, tau: f64) -> Result<Self, EvalError> {
        check_tau(tau)?;
        Ok(Self {
            model,
            cfg,
            tau,
            flows: IndexMap::new(),
            labels: HashMap::new(),
            default_label: None,
            skipped: SkipCounts::default(),
            filtered_out: 0,
            forward_times: Vec::new(),
        })
    }

    /// Label attached to decisions of flows without an explicit label.
    pub fn with_default_label(mut self, label: Option<usize>) -> Self {
        self.default_label = label;
        self
    }

    pub fn with_labels(mut self, labels: HashMap<FlowKey, usize>) -> Self {
        self.labels = labels;
        self
    }

    fn decide(&mut self, key: FlowKey, force: bool) -> Result<Option<StreamEvent>, EvalError> {
        let label = self.labels.get(&key).copied().or(self.default_label);
        let st = &self.flows[&key];
        let k = st.timestamps.len();
        let rec = FlowRecord::new(
            Some(key),
            label,
            self.cfg.d,
            st.packets.clone(),
            st.timestamps.clone(),
        );
        let start = Instant::now();
        let p = self.model.confidences(&rec)?;
        let latency = start.elapsed();
        self.forward_times.push(latency);
        let (predicted, confidence) = top1(&p);
        let crossed = confidence >= self.tau;
        if !(crossed || force || k >= self.cfg.max_len) {
            return Ok(None);
        }
        let st = self.flows.get_mut(&key).expect("flow exists");
        st.decided = true;
        Ok(Some(StreamEvent {
            decision: Decision {
                flow_id: key.to_string(),
                label,
                predicted,
                confidence,
                k,
                crossed_threshold: crossed,
                tau: self.tau,
            },
            capture_ts: st.last_capture_ts,
            latency,
        }))
    }

    /// Feeds one captured packet; returns a decision if this packet settled
    /// its flow.
    pub fn push(&mut self, pkt: &Packet) -> Result<Option<StreamEvent>, EvalError> {
        let summary = match Ipv4Summary::parse(&pkt.bytes) {
            Ok(s) => s,
            Err(FlowcapError::NotIpv4 { .. }) => {
                self.skipped.non_ipv4 += 1;
                return Ok(None);
            }
            Err(_) => {
                self.skipped.malformed += 1;
                return Ok(None);
            }
        };
        let key = FlowKey::from_summary(&summary, self.cfg.flow_variant);
        let st = self.flows.entry(key).or_default();
        if st.raw_seen >= self.cfg.max_len {
            self.skipped.over_length += 1;
            return Ok(None);
        }
        st.raw_seen += 1;
        if !self.cfg.filter.matches(&pkt.bytes) {
            self.filtered_out += 1;
            return Ok(None);
        }
        let row = preprocess_packet(pkt, self.cfg.d)?;
        let ts_ns = if st.timestamps.is_empty() {
            st.first_ns = pkt.ts_ns;
            pkt.ts_ns
        } else if pkt.ts_ns < st.prev_ns {
            match self.cfg.timestamp_policy {
                TimestampPolicy::Strict => {
                    return Err(FlowcapError::ViolatedMonotonicity {
                        index: st.timestamps.len(),
                    }
                    .into())
                }
                TimestampPolicy::Clamp => st.prev_ns,
            }
        } else {
            pkt.ts_ns
        };
        st.prev_ns = ts_ns;
        st.last_capture_ts = pkt.ts();
        st.timestamps.push((ts_ns - st.first_ns) as f64 * 1e-9);
        st.packets.extend(row);
        if st.decided {
            return Ok(None);
        }
        self.decide(key, false)
    }

    /// Decides every still-open flow on the packets it has, in order of
    /// first appearance.
    pub fn finish(mut self) -> Result<(Vec<StreamEvent>, Vec<Duration>, SkipCounts), EvalError> {
        let open: Vec<FlowKey> = self
            .flows
            .iter()
            .filter(|(_, s)| !s.decided && !s.timestamps.is_empty())
            .map(|(k, _)| *k)
            .collect();
        let mut out = Vec::with_capacity(open.len());
        for key in open {
            out.extend(self.decide(key, true)?);
        }
        Ok((out, self.forward_times, self.skipped))
    }
}
