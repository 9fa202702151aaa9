//! Deterministic synthetic flows for desk-scale experiments.
//!
//! Each class has a payload motif (a few seeded packet templates blended with
//! a shared base template), per-packet byte variation, an inter-arrival
//! profile and a flow-length distribution. Packets are built as real
//! Ethernet/IPv4/TCP frames on port 80 and turned into records through the
//! ordinary preprocessing path, so a written capture prepares back into the
//! same dataset.
//!
//! Two classes that share a `motif_seed` and a length distribution produce
//! byte-identical flows (flow `j` of one equals flow `j` of the other) and
//! differ only in their timestamps.

use std::io::Write;
use std::net::Ipv4Addr;

use rand::Rng;
use rand_distr::{Distribution, Pareto};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowcap::{
    build_flow_record, build_frame, write_pcap, Dataset, FlowKey, FlowRecord, FlowVariant,
    FlowcapError, Ipv4Summary, Packet, PrepConfig, TsResolution, IPPROTO_TCP,
};
use crate::rng::substream;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Flowcap(#[from] FlowcapError),
}

/// Distribution of inter-arrival times, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimingProfile {
    /// `period · (1 + U(−jitter, jitter))`.
    Periodic { period: f64, jitter: f64 },
    /// Bursts of `burst_len` packets `intra` apart, separated by `inter`.
    Bursty {
        burst_len: usize,
        intra: f64,
        inter: f64,
    },
    /// Pareto gaps with the given scale (minimum) and shape.
    HeavyTail { scale: f64, shape: f64 },
}

impl TimingProfile {
    fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            TimingProfile::Periodic { period, jitter } => {
                period > 0.0 && (0.0..1.0).contains(&jitter)
            }
            TimingProfile::Bursty {
                burst_len,
                intra,
                inter,
            } => burst_len >= 1 && intra >= 0.0 && inter > 0.0,
            TimingProfile::HeavyTail { scale, shape } => scale > 0.0 && shape > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("bad timing profile {self:?}"))
        }
    }

    /// Gap preceding packet `i` (`i ≥ 1`).
    fn gap<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> f64 {
        match *self {
            TimingProfile::Periodic { period, jitter } => {
                let j = if jitter > 0.0 {
                    rng.random_range(-jitter..jitter)
                } else {
                    0.0
                };
                period * (1.0 + j)
            }
            TimingProfile::Bursty {
                burst_len,
                intra,
                inter,
            } => {
                let base = if i % burst_len == 0 { inter } else { intra };
                base * rng.random_range(0.9..1.1)
            }
            TimingProfile::HeavyTail { scale, shape } => {
                Pareto::new(scale, shape).expect("validated").sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthDist {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
}

impl LengthDist {
    fn bounds(&self) -> (usize, usize) {
        match *self {
            LengthDist::Fixed { n } => (n, n),
            LengthDist::Uniform { min, max } => (min, max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub name: String,
    /// Seeds the payload templates and all per-flow byte randomness.
    pub motif_seed: u64,
    /// Probability that a payload byte is redrawn per packet.
    pub variation: f64,
    pub timing: TimingProfile,
    pub length: LengthDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<ClassProfile>,
    pub flows_per_class: usize,
    /// Seeds the class motifs, i.e. what the classes look like.
    pub seed: u64,
    /// Seeds the individual flows. Two specs with the same `seed` and
    /// different `flow_seed` describe fresh samples of the same classes.
    pub flow_seed: u64,
    /// Share of template bytes that are class-specific rather than drawn
    /// from the base template common to all classes (1 = fully distinct).
    pub separation: f64,
    /// Distinct packet templates per motif.
    pub templates: usize,
    /// Maximum flow length; generated lengths must not exceed it.
    pub max_len: usize,
}

impl SynthSpec {
    /// Same classes as `self` with new flows drawn from `flow_seed`.
    pub fn resampled(&self, flow_seed: u64, flows_per_class: usize) -> Self {
        Self {
            flow_seed,
            flows_per_class,
            ..self.clone()
        }
    }

    /// Six classes. Classes 0 ("benign") and 1 ("slow-drip") share bytes and
    /// lengths and differ only in packet timing; the rest differ in both.
    pub fn preset(seed: u64) -> Self {
        let full = LengthDist::Fixed { n: 30 };
        let class = |name: &str, motif_seed, timing| ClassProfile {
            name: name.into(),
            motif_seed,
            variation: 0.02,
            timing,
            length: full.clone(),
        };
        Self {
            classes: vec![
                class(
                    "benign",
                    1,
                    TimingProfile::Periodic {
                        period: 0.05,
                        jitter: 0.2,
                    },
                ),
                class(
                    "slow-drip",
                    1,
                    TimingProfile::Periodic {
                        period: 0.6,
                        jitter: 0.2,
                    },
                ),
                class(
                    "burst-scan",
                    2,
                    TimingProfile::Bursty {
                        burst_len: 5,
                        intra: 0.004,
                        inter: 0.8,
                    },
                ),
                class(
                    "heavy-tail",
                    3,
                    TimingProfile::HeavyTail {
                        scale: 0.02,
                        shape: 1.5,
                    },
                ),
                class(
                    "flood",
                    4,
                    TimingProfile::Periodic {
                        period: 0.01,
                        jitter: 0.5,
                    },
                ),
                class(
                    "probe",
                    5,
                    TimingProfile::Bursty {
                        burst_len: 3,
                        intra: 0.001,
                        inter: 0.3,
                    },
                ),
            ],
            flows_per_class: 3,
            seed,
            flow_seed: seed,
            separation: 1.0,
            templates: 4,
            max_len: 30,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.classes.len() < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.flows_per_class == 0 || self.templates == 0 || self.max_len == 0 {
            return bad("flows_per_class, templates and max_len must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return bad("separation must lie in [0, 1]".into());
        }
        if self.flows_per_class > 250 * 256 {
            return bad("too many flows per class for the address plan".into());
        }
        for c in &self.classes {
            if !(0.0..=1.0).contains(&c.variation) {
                return bad(format!("class `{}`: variation must lie in [0, 1]", c.name));
            }
            let (lo, hi) = c.length.bounds();
            if lo < 1 || lo > hi || hi > self.max_len {
                return bad(format!(
                    "class `{}`: lengths must lie in [1, {}]",
                    c.name, self.max_len
                ));
            }
            c.timing.validate().map_err(SynthError::InvalidSpec)?;
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

const BASE_STREAM: u64 = 0xBA5E;
const MOTIF_STREAM: u64 = 0x4D07;
const BYTES_STREAM: u64 = 0xB17E;
const TIMING_STREAM: u64 = 0x7111;
const LENGTH_STREAM: u64 = 0x1E46;

/// Capture epoch of the first synthetic flow (2023-11-14T22:13:20Z).
const EPOCH_NS: u64 = 1_700_000_000_000_000_000;
/// Spacing between flow start times.
const FLOW_SPACING_NS: u64 = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFlow {
    pub label: usize,
    pub key: FlowKey,
    pub packets: Vec<Packet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub class_names: Vec<String>,
    pub flows: Vec<SynthFlow>,
}

fn templates(spec: &SynthSpec, motif_seed: u64) -> Vec<Vec<u8>> {
    let mut base_rng = substream(spec.seed, &[BASE_STREAM]);
    let mut motif_rng = substream(spec.seed, &[MOTIF_STREAM, motif_seed]);
    (0..spec.templates)
        .map(|_| {
            let len = motif_rng.random_range(96..=400);
            (0..len)
                .map(|_| {
                    let shared: u8 = base_rng.random();
                    let own: u8 = motif_rng.random();
                    if motif_rng.random::<f64>() < spec.separation {
                        own
                    } else {
                        shared
                    }
                })
                .collect()
        })
        .collect()
}

impl SynthData {
    /// Preprocesses every flow into a labelled record.
    pub fn records(&self, prep: &PrepConfig) -> Result<Vec<FlowRecord>, SynthError> {
        self.flows
            .iter()
            .map(|f| {
                let mut rec = build_flow_record(&f.packets, prep, Some(f.label))?;
                rec.key = Some(f.key);
                Ok(rec)
            })
            .collect()
    }

    pub fn dataset(&self, prep: &PrepConfig) -> Result<Dataset, SynthError> {
        Ok(Dataset {
            classes: self.class_names.clone(),
            prep: prep.clone(),
            records: self.records(prep)?,
            skipped: Default::default(),
        })
    }

    /// Every packet of the selected flows, in capture-time order.
    pub fn merged_packets(&self, class: Option<usize>) -> Vec<Packet> {
        let mut all: Vec<Packet> = self
            .flows
            .iter()
            .filter(|f| class.is_none_or(|c| f.label == c))
            .flat_map(|f| f.packets.iter().cloned())
            .collect();
        all.sort_by_key(|p| p.ts_ns);
        all
    }

    /// Writes the selected flows as a classic pcap.
    pub fn write_pcap<W: Write>(
        &self,
        out: W,
        class: Option<usize>,
        res: TsResolution,
    ) -> Result<(), SynthError> {
        write_pcap(out, &self.merged_packets(class), res)?;
        Ok(())
    }
}

/// Generates `flows_per_class` flows for every class.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let victim = Ipv4Addr::new(192, 168, 0, 1);
    let mut flows = Vec::with_capacity(spec.classes.len() * spec.flows_per_class);
    for (ci, class) in spec.classes.iter().enumerate() {
        let tpl = templates(spec, class.motif_seed);
        for j in 0..spec.flows_per_class {
            let global = (ci * spec.flows_per_class + j) as u64;
            let attacker = Ipv4Addr::new(10, 1 + ci as u8, (j / 250) as u8, 1 + (j % 250) as u8);
            // Byte and length streams depend on the motif, not on the class,
            // so motif twins stay byte-identical.
            let mut bytes_rng =
                substream(spec.flow_seed, &[BYTES_STREAM, class.motif_seed, j as u64]);
            let mut len_rng =
                substream(spec.flow_seed, &[LENGTH_STREAM, class.motif_seed, j as u64]);
            let mut time_rng = substream(spec.flow_seed, &[TIMING_STREAM, ci as u64, j as u64]);
            let (lo, hi) = class.length.bounds();
            let n = len_rng.random_range(lo..=hi);
            let sport: u16 = bytes_rng.random_range(1024..=65535);
            let start = EPOCH_NS + global * FLOW_SPACING_NS;
            let mut t = 0.0f64;
            let mut packets = Vec::with_capacity(n);
            for p in 0..n {
                if p > 0 {
                    t += class.timing.gap(p, &mut time_rng);
                }
                let template = &tpl[p % tpl.len()];
                let payload: Vec<u8> = template
                    .iter()
                    .map(|&b| {
                        if bytes_rng.random::<f64>() < class.variation {
                            bytes_rng.random()
                        } else {
                            b
                        }
                    })
                    .collect();
                let (src, dst, ports) = if p % 2 == 0 {
                    (attacker, victim, (sport, 80))
                } else {
                    (victim, attacker, (80, sport))
                };
                let bytes = build_frame(src, dst, IPPROTO_TCP, ports, p as u16, &payload);
                let ts_ns = start + (t * 1e9).round() as u64;
                packets.push(Packet {
                    ts_ns,
                    orig_len: bytes.len() as u32,
                    bytes,
                });
            }
            let key = FlowKey::from_summary(
                &Ipv4Summary::parse(&packets[0].bytes).expect("well-formed frame"),
                FlowVariant::ThreeTuple,
            );
            flows.push(SynthFlow {
                label: ci,
                key,
                packets,
            });
        }
    }
    Ok(SynthData {
        class_names: spec.class_names(),
        flows,
    })
}
