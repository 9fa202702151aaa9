//! Training-set construction and on-the-fly flow augmentation.
//!
//! The five augmentations run in a fixed order (jitter, traffic scaling,
//! packet drop, packet insertion, noise) and each draws from its own random
//! sub-stream keyed by `(seed, epoch, sample, stage)`.
//!
//! All operations act on unpadded records (mask all true); padding happens
//! last, in [`pad_and_mask`].

mod splits;

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowcap::FlowRecord;
use crate::rng::substream;

pub use splits::{enumerate_splits, select_diverse, SplitPlan};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("need at least {need} samples per class, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    /// Jitter half-width as a fraction of the smallest neighbouring gap.
    pub jitter_frac: f64,
    pub scale_set: Vec<f64>,
    pub drop_coeff: f64,
    pub drop_bias: f64,
    pub insert_coeff: f64,
    pub insert_bias: f64,
    pub noise_pkt_div: usize,
    pub noise_byte_div: usize,
    pub noise_sigma: f64,
    pub oversample_factor: usize,
    pub seed: u64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            jitter_frac: 0.7,
            scale_set: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            drop_coeff: 0.25,
            drop_bias: 0.5,
            insert_coeff: 0.15,
            insert_bias: 0.5,
            noise_pkt_div: 3,
            noise_byte_div: 100,
            noise_sigma: 0.1,
            oversample_factor: 5,
            seed: 0,
        }
    }
}

impl AugConfig {
    /// Configuration under which the pipeline is the identity.
    pub fn identity() -> Self {
        Self {
            jitter_frac: 0.0,
            scale_set: vec![1.0],
            drop_coeff: 0.0,
            insert_coeff: 0.0,
            noise_sigma: 0.0,
            oversample_factor: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.jitter_frac) {
            return bad("jitter_frac must lie in [0, 1)");
        }
        if self.scale_set.is_empty() || self.scale_set.iter().any(|&s| !(s > 0.0)) {
            return bad("scale_set must be non-empty and positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if self.noise_pkt_div == 0 || self.noise_byte_div == 0 {
            return bad("noise divisors must be >= 1");
        }
        if self.oversample_factor == 0 {
            return bad("oversample_factor must be >= 1");
        }
        Ok(())
    }

    pub fn max_drop(&self, n: usize) -> usize {
        floor_count(self.drop_coeff, self.drop_bias, n)
    }

    pub fn max_insert(&self, n: usize) -> usize {
        floor_count(self.insert_coeff, self.insert_bias, n)
    }
}

/// `max(0, ⌊coeff·n − bias⌋)`.
fn floor_count(coeff: f64, bias: f64, n: usize) -> usize {
    (coeff * n as f64 - bias).floor().max(0.0) as usize
}

/// Augmentation stages, in pipeline order. The discriminant is the sub-stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Jitter = 1,
    Scale = 2,
    Drop = 3,
    Insert = 4,
    Noise = 5,
}

/// Identifies one sample draw: `(seed, epoch, sample index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleKey {
    pub seed: u64,
    pub epoch: u64,
    pub sample: u64,
}

impl SampleKey {
    pub fn rng(&self, stage: Stage) -> crate::rng::StreamRng {
        substream(self.seed, &[self.epoch, self.sample, stage as u64])
    }
}

/// All prefixes of `rec`, shortest first.
pub fn make_subflows(rec: &FlowRecord) -> Vec<FlowRecord> {
    let rec = rec.unpadded();
    (1..=rec.rows()).map(|k| rec.prefix(k)).collect()
}

/// Perturbs every timestamp after the first by `U(−f·t_min, f·t_min)`, where
/// `t_min` is the smaller of the two neighbouring gaps in the original vector
/// (the last packet only has one). The result is re-sorted and re-anchored at 0.
pub fn jitter<R: Rng + ?Sized>(rec: &FlowRecord, frac: f64, rng: &mut R) -> FlowRecord {
    let mut out = rec.clone();
    let t = &rec.timestamps;
    let n = t.len();
    if n < 2 || frac == 0.0 {
        return out;
    }
    for i in 1..n {
        let before = t[i] - t[i - 1];
        let t_min = if i + 1 < n {
            before.min(t[i + 1] - t[i])
        } else {
            before
        };
        let half = frac * t_min;
        if half > 0.0 {
            out.timestamps[i] = t[i] + rng.random_range(-half..half);
        }
    }
    out.timestamps.sort_by(f64::total_cmp);
    let t0 = out.timestamps[0];
    if t0 != 0.0 {
        out.timestamps.iter_mut().for_each(|x| *x -= t0);
    }
    out
}

/// Multiplies every inter-packet gap by a factor drawn from `scale_set`.
pub fn traffic_scale<R: Rng + ?Sized>(
    rec: &FlowRecord,
    scale_set: &[f64],
    rng: &mut R,
) -> FlowRecord {
    let s = scale_set[rng.random_range(0..scale_set.len())];
    let mut out = rec.clone();
    // Scaled gaps summed from t0 = 0 equal the scaled absolute times.
    if s != 1.0 {
        out.timestamps.iter_mut().for_each(|t| *t *= s);
    }
    out
}

/// Removes `U{0..max_drop(n)}` packets, never the first. Survivors keep their
/// timestamps.
pub fn packet_drop<R: Rng + ?Sized>(rec: &FlowRecord, cfg: &AugConfig, rng: &mut R) -> FlowRecord {
    let n = rec.rows();
    let max = cfg.max_drop(n).min(n.saturating_sub(1));
    if max == 0 {
        return rec.clone();
    }
    let count = rng.random_range(0..=max);
    if count == 0 {
        return rec.clone();
    }
    let mut drop = vec![false; n];
    for i in sample(rng, n - 1, count) {
        drop[i + 1] = true;
    }
    let mut packets = Vec::with_capacity((n - count) * rec.d);
    let mut timestamps = Vec::with_capacity(n - count);
    for i in (0..n).filter(|&i| !drop[i]) {
        packets.extend_from_slice(rec.row(i));
        timestamps.push(rec.timestamps[i]);
    }
    FlowRecord::new(rec.key, rec.label, rec.d, packets, timestamps)
}

/// Inserts `U{0..max_insert(n)}` all-zero packets (capped so the flow stays
/// within `max_len`). Each goes into a uniformly chosen gap after the first
/// packet and takes the midpoint of its neighbours' timestamps; one appended
/// after the last packet takes last + mean gap.
pub fn packet_insert<R: Rng + ?Sized>(
    rec: &FlowRecord,
    cfg: &AugConfig,
    max_len: usize,
    rng: &mut R,
) -> FlowRecord {
    let n = rec.rows();
    let max = cfg.max_insert(n).min(max_len.saturating_sub(n));
    if max == 0 {
        return rec.clone();
    }
    let count = rng.random_range(0..=max);
    if count == 0 {
        return rec.clone();
    }
    let d = rec.d;
    let mut rows: Vec<Vec<f32>> = (0..n).map(|i| rec.row(i).to_vec()).collect();
    let mut ts = rec.timestamps.clone();
    for _ in 0..count {
        let len = ts.len();
        let pos = rng.random_range(1..=len);
        let t = if pos < len {
            0.5 * (ts[pos - 1] + ts[pos])
        } else if len >= 2 {
            ts[len - 1] + ts[len - 1] / (len - 1) as f64
        } else {
            ts[len - 1]
        };
        rows.insert(pos, vec![0.0; d]);
        ts.insert(pos, t);
    }
    FlowRecord::new(rec.key, rec.label, d, rows.concat(), ts)
}

/// Adds `Normal(0, σ)` noise to up to `⌊n/pkt_div⌋` packets and, within each,
/// up to `⌊d/byte_div⌋` bytes. Results are clamped to `[0, 1]`.
pub fn noise_inject<R: Rng + ?Sized>(rec: &FlowRecord, cfg: &AugConfig, rng: &mut R) -> FlowRecord {
    let n = rec.rows();
    let d = rec.d;
    let max_pkts = n / cfg.noise_pkt_div;
    let max_bytes = d / cfg.noise_byte_div;
    if max_pkts == 0 || max_bytes == 0 || cfg.noise_sigma == 0.0 {
        return rec.clone();
    }
    let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
    let mut out = rec.clone();
    let pkt_count = rng.random_range(0..=max_pkts);
    for p in sample(rng, n, pkt_count) {
        let byte_count = rng.random_range(0..=max_bytes);
        for b in sample(rng, d, byte_count) {
            let cell = &mut out.packets[p * d + b];
            let eps: f64 = normal.sample(rng);
            *cell = (f64::from(*cell) + eps).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Jitter, scaling, drop, insertion and noise, in that order.
///
/// The output depends only on `(rec, cfg, key)`.
pub fn augment_pipeline(
    rec: &FlowRecord,
    cfg: &AugConfig,
    max_len: usize,
    key: SampleKey,
) -> FlowRecord {
    let rec = rec.unpadded();
    let r = jitter(&rec, cfg.jitter_frac, &mut key.rng(Stage::Jitter));
    let r = traffic_scale(&r, &cfg.scale_set, &mut key.rng(Stage::Scale));
    let r = packet_drop(&r, cfg, &mut key.rng(Stage::Drop));
    let r = packet_insert(&r, cfg, max_len, &mut key.rng(Stage::Insert));
    noise_inject(&r, cfg, &mut key.rng(Stage::Noise))
}

/// Pads with zero rows (timestamp 0, mask false) up to `max_len` rows.
pub fn pad_and_mask(rec: &FlowRecord, max_len: usize) -> FlowRecord {
    let mut out = rec.unpadded();
    let n = out.rows();
    if n < max_len {
        out.packets.resize(max_len * out.d, 0.0);
        out.timestamps.resize(max_len, 0.0);
        out.mask.resize(max_len, false);
    }
    out
}

/// Repeats the dataset `factor` times. Copies share the underlying record.
pub fn oversample(dataset: &[Arc<FlowRecord>], factor: usize) -> Vec<Arc<FlowRecord>> {
    let mut out = Vec::with_capacity(dataset.len() * factor);
    for _ in 0..factor {
        out.extend(dataset.iter().cloned());
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rec(ts: &[f64], d: usize) -> FlowRecord {
        let packets = (0..ts.len() * d).map(|i| ((i % 7) as f32) / 7.0).collect();
        FlowRecord::new(None, Some(1), d, packets, ts.to_vec())
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn subflows_are_prefixes() {
        let r = rec(&[0.0, 0.2, 0.5, 0.9], 3);
        let subs = make_subflows(&r);
        assert_eq!(subs.len(), 4);
        assert_eq!(subs[2].timestamps, vec![0.0, 0.2, 0.5]);
        assert_eq!(subs[2].packets, r.packets[..9].to_vec());
        assert_eq!(subs[2].label, Some(1));
        let one = rec(&[0.0], 3);
        assert_eq!(make_subflows(&one), vec![one]);
        let ts: Vec<f64> = (0..30).map(f64::from).collect();
        let lens: Vec<usize> = make_subflows(&rec(&ts, 2))
            .iter()
            .map(|s| s.rows())
            .collect();
        assert_eq!(lens, (1..=30).collect::<Vec<_>>());
    }

    #[test]
    fn jitter_bounds_and_monotone() {
        let r = rec(&[0.0, 1.0, 2.0], 1);
        let mut g = rng(1);
        for _ in 0..10_000 {
            let j = jitter(&r, 0.7, &mut g);
            assert_eq!(j.timestamps[0], 0.0);
            assert!(j.timestamps.windows(2).all(|w| w[0] <= w[1]));
            // each perturbed value lies within ±0.7 of its original; after sorting
            // the middle element is still within (0.3, 2.7).
            assert!(j.timestamps[1] > 0.3 - 1e-12 && j.timestamps[1] < 2.7);
            assert!(j.timestamps[2] > 1.3 && j.timestamps[2] < 2.7);
        }
        assert_eq!(jitter(&rec(&[0.0], 1), 0.7, &mut g).timestamps, vec![0.0]);
        assert_eq!(jitter(&r, 0.0, &mut g), r);
        let flat = rec(&[0.0, 0.0], 1);
        assert_eq!(jitter(&flat, 0.7, &mut g), flat);
    }

    #[test]
    fn jitter_middle_range_before_sorting() {
        // With gaps 1.0 on both sides, the middle element moves by < 0.7; the
        // last by < 0.7 too, so the middle stays within (0.3, 1.7) whenever the
        // order is preserved.
        let r = rec(&[0.0, 1.0, 2.0], 1);
        let mut g = rng(2);
        let mut seen_lo = f64::MAX;
        let mut seen_hi = f64::MIN;
        for _ in 0..10_000 {
            let j = jitter(&r, 0.7, &mut g);
            seen_lo = seen_lo.min(j.timestamps[1]);
            seen_hi = seen_hi.max(j.timestamps[1]);
        }
        assert!(seen_lo > 0.3 && seen_lo < 0.35, "{seen_lo}");
        assert!(seen_hi < 1.7 && seen_hi > 1.6, "{seen_hi}");
    }

    #[test]
    fn scale_examples() {
        let r = rec(&[0.0, 1.0, 3.0], 1);
        assert_eq!(
            traffic_scale(&r, &[0.5], &mut rng(0)).timestamps,
            vec![0.0, 0.5, 1.5]
        );
        assert_eq!(traffic_scale(&r, &[1.0], &mut rng(0)), r);
        let mut g = rng(3);
        for _ in 0..100 {
            let s = traffic_scale(&r, &AugConfig::default().scale_set, &mut g);
            assert_eq!(s.timestamps[0], 0.0);
            assert!(s.timestamps.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn drop_and_insert_limits() {
        let cfg = AugConfig::default();
        assert_eq!(cfg.max_drop(1), 0);
        assert_eq!(cfg.max_drop(2), 0);
        assert_eq!(cfg.max_drop(6), 1);
        assert_eq!(cfg.max_drop(30), 7);
        assert_eq!(cfg.max_insert(9), 0);
        assert_eq!(cfg.max_insert(10), 1);
        assert_eq!(cfg.max_insert(30), 4);

        let two = rec(&[0.0, 1.0], 2);
        assert_eq!(packet_drop(&two, &cfg, &mut rng(0)), two);
        let nine = rec(&(0..9).map(f64::from).collect::<Vec<_>>(), 2);
        assert_eq!(packet_insert(&nine, &cfg, 30, &mut rng(0)), nine);
    }

    #[test]
    fn drop_keeps_first_and_absolute_times() {
        let cfg = AugConfig::default();
        let ts: Vec<f64> = (0..30).map(|i| f64::from(i) * 0.1).collect();
        let r = rec(&ts, 2);
        let mut g = rng(5);
        for _ in 0..500 {
            let out = packet_drop(&r, &cfg, &mut g);
            assert!(out.rows() >= 30 - 7);
            assert_eq!(out.row(0), r.row(0));
            for (i, t) in out.timestamps.iter().enumerate() {
                let orig = ts.iter().position(|x| x == t).expect("timestamp kept");
                assert_eq!(out.row(i), r.row(orig));
            }
        }
    }

    #[test]
    fn insert_midpoint_and_zero_rows() {
        let cfg = AugConfig {
            insert_coeff: 1.0,
            insert_bias: 0.0,
            ..AugConfig::default()
        };
        let r = rec(&[0.0, 0.2, 0.4], 4);
        let mut g = rng(11);
        let mut saw_mid = false;
        for _ in 0..200 {
            let out = packet_insert(&r, &cfg, 30, &mut g);
            for i in 0..out.rows() {
                if out.row(i).iter().all(|&v| v == 0.0) {
                    let t = out.timestamps[i];
                    if (t - 0.3).abs() < 1e-12 {
                        saw_mid = true;
                    }
                }
            }
            assert!(out.timestamps.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(out.row(0), r.row(0));
        }
        assert!(saw_mid);
        // the cap at max_len
        let full = rec(&(0..30).map(f64::from).collect::<Vec<_>>(), 1);
        assert_eq!(
            packet_insert(&full, &AugConfig::default(), 30, &mut g),
            full
        );
    }

    #[test]
    fn noise_limits() {
        let cfg = AugConfig::default();
        let two = rec(&[0.0, 1.0], 448);
        assert_eq!(noise_inject(&two, &cfg, &mut rng(0)), two);
        let r = rec(&(0..30).map(f64::from).collect::<Vec<_>>(), 448);
        let mut g = rng(9);
        for _ in 0..200 {
            let out = noise_inject(&r, &cfg, &mut g);
            for p in 0..30 {
                let changed = out
                    .row(p)
                    .iter()
                    .zip(r.row(p))
                    .filter(|(a, b)| a != b)
                    .count();
                assert!(changed <= 4);
            }
            assert!(out.packets.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pipeline_identity_and_determinism() {
        let r = rec(
            &[0.0, 0.1, 0.15, 0.4, 0.45, 0.9, 1.0, 1.2, 1.3, 2.0, 2.1, 2.2],
            448,
        );
        let key = SampleKey {
            seed: 7,
            epoch: 3,
            sample: 11,
        };
        assert_eq!(augment_pipeline(&r, &AugConfig::identity(), 30, key), r);
        let cfg = AugConfig::default();
        let a = augment_pipeline(&r, &cfg, 30, key);
        let b = augment_pipeline(&r, &cfg, 30, key);
        assert_eq!(a, b);
        let c = augment_pipeline(&r, &cfg, 30, SampleKey { sample: 12, ..key });
        assert_ne!(a, c);
    }

    #[test]
    fn padding() {
        let r = rec(&[0.0, 0.1, 0.2, 0.3], 5);
        let p = pad_and_mask(&r, 30);
        assert_eq!(p.rows(), 30);
        assert_eq!(p.valid_len(), 4);
        assert_eq!(p.mask.iter().filter(|&&m| m).count(), 4);
        assert!(p.mask[..4].iter().all(|&m| m));
        assert!(p.packets[4 * 5..].iter().all(|&v| v == 0.0));
        assert!(p.timestamps[4..].iter().all(|&t| t == 0.0));
        let full = rec(&(0..30).map(f64::from).collect::<Vec<_>>(), 2);
        assert_eq!(pad_and_mask(&full, 30), full);
        assert_eq!(p.unpadded(), r);
    }

    #[test]
    fn oversample_counts_and_sharing() {
        let base: Vec<Arc<FlowRecord>> = (0..60).map(|_| Arc::new(rec(&[0.0], 1))).collect();
        let out = oversample(&base, 5);
        assert_eq!(out.len(), 300);
        assert!(Arc::ptr_eq(&out[0], &out[60]));
        assert_eq!(oversample(&base, 1).len(), 60);
    }

    #[test]
    fn config_validation() {
        assert!(AugConfig::default().validate().is_ok());
        assert!(AugConfig::identity().validate().is_ok());
        assert!(AugConfig {
            jitter_frac: 1.0,
            ..AugConfig::default()
        }
        .validate()
        .is_err());
        assert!(AugConfig {
            scale_set: vec![],
            ..AugConfig::default()
        }
        .validate()
        .is_err());
        assert!(AugConfig {
            noise_sigma: -1.0,
            ..AugConfig::default()
        }
        .validate()
        .is_err());
    }
}
