//! Seed derivation. Every random stream in an experiment is derived from one
//! root seed plus a component tag and an index, so no component shares or
//! consumes another's stream:
//!
//! `derive(root, tag, index) = splitmix64(root ^ fnv1a(tag) ^ splitmix64(index))`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn derive(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(root ^ fnv1a(tag) ^ splitmix64(index))
}

pub fn rng(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tag, index))
}
