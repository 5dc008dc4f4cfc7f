//! Seed derivation.
//!
//! Every random decision in a run draws from its own ChaCha stream keyed by
//! `(seed, purpose, indices...)`. Streams never depend on evaluation order,
//! so per-node work can be scheduled on any number of threads and still
//! produce the same bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives a child seed from `seed`, a purpose tag and a list of indices.
pub fn derive_seed(seed: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ fnv1a(tag));
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

pub fn stream(seed: u64, tag: &str, parts: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, tag, parts))
}

pub fn from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
