//! Packet capture ingestion and flow preparation.
//!
//! Captures are parsed into [`Packet`]s, grouped into host-centric flows
//! ([`identify_flows`]), filtered by protocol ([`filter_packets`]) and turned
//! into [`FlowRecord`]s: an `n × d` matrix of normalised packet bytes plus a
//! vector of timestamps relative to the first packet.

mod dataset;
mod frame;
mod pcap;

use std::io;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{Dataset, DatasetManifest};
pub use frame::{
    build_frame, ethertype, FlowKey, FlowVariant, Ipv4Summary, PacketFilter, Proto, ETHERTYPE_ARP,
    ETHERTYPE_IPV4, ETH_HEADER_LEN, IPPROTO_ICMP, IPPROTO_TCP, IPPROTO_UDP, IPV4_MIN_HEADER_LEN,
};
pub use pcap::{
    parse_pcap, parse_pcap_bytes, write_pcap, Capture, TsResolution, LINKTYPE_ETHERNET,
    MAGIC_MICROS, MAGIC_NANOS,
};

#[derive(Debug, Error)]
pub enum FlowcapError {
    #[error("not a classic pcap file (magic {magic:#010x})")]
    UnknownMagic { magic: u32 },
    #[error("pcap global header truncated at byte {offset}")]
    TruncatedHeader { offset: usize },
    #[error("pcap record truncated at byte {offset}")]
    TruncatedRecord { offset: usize },
    #[error("unsupported pcap link type {0} (only Ethernet is handled)")]
    UnsupportedLinkType(u32),
    #[error("unknown packet filter `{0}`")]
    UnknownFilter(String),
    #[error("frame is not IPv4 (ethertype {ethertype:#06x})")]
    NotIpv4 { ethertype: u16 },
    #[error("frame too short ({len} bytes)")]
    TooShort { len: usize },
    #[error("flow is empty")]
    EmptyFlow,
    #[error("timestamp at packet {index} precedes its predecessor")]
    ViolatedMonotonicity { index: usize },
    #[error("malformed flow key `{0}`")]
    BadFlowKey(String),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One captured frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    /// Capture time in nanoseconds since the capture epoch.
    pub ts_ns: u64,
    /// Link-layer frame as captured (possibly shorter than `orig_len`).
    pub bytes: Vec<u8>,
    pub orig_len: u32,
}

impl Packet {
    /// Capture time in seconds.
    pub fn ts(&self) -> f64 {
        self.ts_ns as f64 * 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestampPolicy {
    /// Reject flows whose capture timestamps go backwards.
    #[default]
    Strict,
    /// Clamp a backwards timestamp to its predecessor.
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    /// Packet length in bytes after preprocessing.
    pub d: usize,
    /// Maximum flow length in packets.
    pub max_len: usize,
    pub filter: PacketFilter,
    pub flow_variant: FlowVariant,
    pub timestamp_policy: TimestampPolicy,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            d: 448,
            max_len: 30,
            filter: PacketFilter::Http,
            flow_variant: FlowVariant::ThreeTuple,
            timestamp_policy: TimestampPolicy::Strict,
        }
    }
}

/// Preprocessed flow: row-major `rows × d` packet matrix, relative
/// timestamps and a validity mask. Rows past the valid prefix are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub key: Option<FlowKey>,
    pub label: Option<usize>,
    pub d: usize,
    pub packets: Vec<f32>,
    pub timestamps: Vec<f64>,
    pub mask: Vec<bool>,
}

impl FlowRecord {
    /// Unpadded record; `packets.len()` must equal `timestamps.len() * d`.
    pub fn new(
        key: Option<FlowKey>,
        label: Option<usize>,
        d: usize,
        packets: Vec<f32>,
        timestamps: Vec<f64>,
    ) -> Self {
        assert_eq!(packets.len(), timestamps.len() * d, "packet matrix shape");
        let mask = vec![true; timestamps.len()];
        Self {
            key,
            label,
            d,
            packets,
            timestamps,
            mask,
        }
    }

    /// Number of stored rows (valid + padding).
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    /// Number of valid packets, `n`.
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.packets[i * self.d..(i + 1) * self.d]
    }

    /// Record holding the first `k` rows.
    pub fn prefix(&self, k: usize) -> FlowRecord {
        let k = k.min(self.rows());
        FlowRecord {
            key: self.key,
            label: self.label,
            d: self.d,
            packets: self.packets[..k * self.d].to_vec(),
            timestamps: self.timestamps[..k].to_vec(),
            mask: self.mask[..k].to_vec(),
        }
    }

    /// Record with padding rows removed.
    pub fn unpadded(&self) -> FlowRecord {
        let n = self.valid_len();
        if n == self.rows() && self.mask.iter().all(|&m| m) {
            return self.clone();
        }
        let mut packets = Vec::with_capacity(n * self.d);
        let mut timestamps = Vec::with_capacity(n);
        for i in (0..self.rows()).filter(|&i| self.mask[i]) {
            packets.extend_from_slice(self.row(i));
            timestamps.push(self.timestamps[i]);
        }
        FlowRecord::new(self.key, self.label, self.d, packets, timestamps)
    }

    /// Checks the record invariants, returning a description of the first
    /// violation.
    pub fn check_invariants(&self, max_len: usize) -> Result<(), String> {
        let rows = self.rows();
        if self.packets.len() != rows * self.d {
            return Err(format!(
                "matrix has {} cells for {rows} rows",
                self.packets.len()
            ));
        }
        if self.mask.len() != rows {
            return Err("mask length differs from rows".into());
        }
        let n = self.valid_len();
        if n == 0 || n > max_len {
            return Err(format!("valid length {n} outside [1, {max_len}]"));
        }
        if self.mask[..n].iter().any(|&m| !m) {
            return Err("mask is not a valid prefix".into());
        }
        if self.timestamps[0] != 0.0 {
            return Err(format!("first timestamp is {}", self.timestamps[0]));
        }
        if let Some(i) = (1..n).find(|&i| !(self.timestamps[i] >= self.timestamps[i - 1])) {
            return Err(format!("timestamps decrease at {i}"));
        }
        if let Some(v) = self.packets.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(format!("cell value {v} outside [0,1]"));
        }
        Ok(())
    }
}

/// Packets dropped during flow identification.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub non_ipv4: usize,
    pub malformed: usize,
    /// Packets beyond the first `max_len` of their flow.
    pub over_length: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.non_ipv4 + self.malformed + self.over_length
    }

    pub fn add(&mut self, other: &SkipCounts) {
        self.non_ipv4 += other.non_ipv4;
        self.malformed += other.malformed;
        self.over_length += other.over_length;
    }
}

/// Flows in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct FlowPartition {
    pub flows: IndexMap<FlowKey, Vec<Packet>>,
    pub skipped: SkipCounts,
}

/// Groups packets into flows keyed by [`FlowKey`]; each flow keeps its first
/// `cfg.max_len` packets in capture order.
pub fn identify_flows(packets: &[Packet], cfg: &PrepConfig) -> FlowPartition {
    let mut part = FlowPartition::default();
    for p in packets {
        let summary = match Ipv4Summary::parse(&p.bytes) {
            Ok(s) => s,
            Err(FlowcapError::NotIpv4 { .. }) => {
                part.skipped.non_ipv4 += 1;
                continue;
            }
            Err(_) => {
                part.skipped.malformed += 1;
                continue;
            }
        };
        let key = FlowKey::from_summary(&summary, cfg.flow_variant);
        let flow = part.flows.entry(key).or_default();
        if flow.len() < cfg.max_len {
            flow.push(p.clone());
        } else {
            part.skipped.over_length += 1;
        }
    }
    part
}

pub fn filter_packets(flow: &[Packet], filter: PacketFilter) -> Vec<Packet> {
    flow.iter()
        .filter(|p| filter.matches(&p.bytes))
        .cloned()
        .collect()
}

/// Strips the Ethernet header and the IPv4 address bytes, fits the result to
/// `d` bytes and scales each byte to `[0, 1]`.
pub fn preprocess_packet(pkt: &Packet, d: usize) -> Result<Vec<f32>, FlowcapError> {
    let frame = &pkt.bytes;
    if frame.len() < ETH_HEADER_LEN + IPV4_MIN_HEADER_LEN {
        return Err(FlowcapError::TooShort { len: frame.len() });
    }
    let et = ethertype(frame).expect("length checked");
    if et != ETHERTYPE_IPV4 {
        return Err(FlowcapError::NotIpv4 { ethertype: et });
    }
    let ip = &frame[ETH_HEADER_LEN..];
    // Source and destination addresses occupy bytes 12..20 of the IP header.
    let kept = ip[..12].iter().chain(&ip[20..]);
    let mut out: Vec<f32> = kept.take(d).map(|&b| f32::from(b) / 255.0).collect();
    out.resize(d, 0.0);
    Ok(out)
}

/// Preprocesses a (filtered) flow into a record. Flows longer than
/// `cfg.max_len` keep their first `max_len` packets.
pub fn build_flow_record(
    flow: &[Packet],
    cfg: &PrepConfig,
    label: Option<usize>,
) -> Result<FlowRecord, FlowcapError> {
    let flow = &flow[..flow.len().min(cfg.max_len)];
    let first = flow.first().ok_or(FlowcapError::EmptyFlow)?;
    let key = Ipv4Summary::parse(&first.bytes)
        .ok()
        .map(|s| FlowKey::from_summary(&s, cfg.flow_variant));

    let mut packets = Vec::with_capacity(flow.len() * cfg.d);
    let mut timestamps = Vec::with_capacity(flow.len());
    let mut prev_ns = first.ts_ns;
    for (i, p) in flow.iter().enumerate() {
        let ts_ns = if p.ts_ns < prev_ns {
            match cfg.timestamp_policy {
                TimestampPolicy::Strict => {
                    return Err(FlowcapError::ViolatedMonotonicity { index: i })
                }
                TimestampPolicy::Clamp => prev_ns,
            }
        } else {
            p.ts_ns
        };
        prev_ns = ts_ns;
        timestamps.push((ts_ns - first.ts_ns) as f64 * 1e-9);
        packets.extend(preprocess_packet(p, cfg.d)?);
    }
    Ok(FlowRecord::new(key, label, cfg.d, packets, timestamps))
}

/// Output of [`prepare_packets`].
#[derive(Debug, Clone, Default)]
pub struct Prepared {
    pub records: Vec<FlowRecord>,
    pub skipped: SkipCounts,
    /// Packets removed by the protocol filter.
    pub filtered_out: usize,
    /// Flows discarded because nothing survived the filter.
    pub empty_flows: usize,
}

/// Flow identification, filtering and preprocessing for one capture.
/// Records are unlabelled and ordered by first appearance of their flow.
pub fn prepare_packets(packets: &[Packet], cfg: &PrepConfig) -> Result<Prepared, FlowcapError> {
    let part = identify_flows(packets, cfg);
    let mut out = Prepared {
        skipped: part.skipped,
        ..Prepared::default()
    };
    for (key, flow) in &part.flows {
        let kept = filter_packets(flow, cfg.filter);
        out.filtered_out += flow.len() - kept.len();
        if kept.is_empty() {
            out.empty_flows += 1;
            continue;
        }
        let mut rec = build_flow_record(&kept, cfg, None)?;
        rec.key = Some(*key);
        out.records.push(rec);
    }
    Ok(out)
}
