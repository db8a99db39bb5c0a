//! Seeded random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha stream keyed by the master
//! seed and a short path of task indices (purpose tag, subset index, replica,
//! chunk, ...). Streams never share state, so results do not depend on how
//! tasks are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_Z: u64 = 0x7a;
pub(crate) const TAG_SUBSET: u64 = 0x5b;
pub(crate) const TAG_DRAW: u64 = 0xd7;
pub(crate) const TAG_SYNTH: u64 = 0x5e;
pub(crate) const TAG_SAMPLE: u64 = 0x5a;
pub(crate) const TAG_STEP: u64 = 0x57;
pub(crate) const TAG_EVAL: u64 = 0xe7;
pub(crate) const TAG_GRAPH: u64 = 0x6a;

#[inline]
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a 64-bit seed from a master seed and a task path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = mix(seed);
    for (i, &p) in path.iter().enumerate() {
        h = mix(h ^ mix(p.wrapping_add((i as u64 + 1) << 56)));
    }
    h
}

/// A ChaCha8 generator for the task identified by `path`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
