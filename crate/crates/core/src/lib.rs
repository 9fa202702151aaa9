//! Early intrusion detection on raw packet flows.
//!
//! The crate is organised along the detection pipeline:
//!
//! * [`flowcap`]: pcap ingestion, flow identification, packet preprocessing
//!   and the dataset file format.
//! * [`augment`]: subflow generation, on-the-fly timestamp-aware
//!   augmentations, padding, oversampling and split enumeration.
//! * [`tinyformer`]: the small Transformer encoder classifier with static and
//!   time-aware positional encodings, its loss, gradients, optimiser and
//!   weight archive.
//! * [`evalkit`]: ensembles, confidence-threshold streaming classification
//!   and earliness/accuracy/FNR/FAR/ERDE metrics.
//! * [`synthgen`]: deterministic synthetic flows and captures for testing.

pub mod augment;
pub mod evalkit;
pub mod flowcap;
pub mod rng;
pub mod synthgen;
pub mod tinyformer;

pub use flowcap::{FlowKey, FlowRecord, Packet, PrepConfig};
