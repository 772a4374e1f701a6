//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! whose key comes from the run seed and a fixed label, and whose stream id
//! is the index of the worker (chain, simulation, replicate) using it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a sub-seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(label)))
}

/// Independent generator for `(seed, label, index)`.
pub fn stream(seed: u64, label: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label));
    rng.set_stream(index);
    rng
}
