//! Counter-derived random sub-streams.
//!
//! Every random decision draws from a ChaCha8 stream seeded by hashing a root
//! seed together with a path of counters (epoch, sample index, stage, ...).
//! Any single stream can be regenerated in isolation, so parallel and serial
//! execution consume identical randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `path` into `root`; distinct paths give unrelated seeds.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &c| {
        splitmix64(acc ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

pub fn substream(root: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, path))
}
