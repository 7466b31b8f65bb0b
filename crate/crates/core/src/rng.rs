//! Deterministic seed derivation.
//!
//! Every stochastic routine takes an explicit seed or an RNG seeded from one.
//! Sub-streams (per client, per trajectory, per update pair) are derived by
//! hashing a parent seed with a role tag and an index, so results are
//! reproducible and independent of thread scheduling.

use rand_chacha::ChaCha12Rng;

/// The RNG used throughout; fixed algorithm so streams are stable across
/// platforms and dependency upgrades.
pub type SeededRng = ChaCha12Rng;

/// SplitMix64 finalizer; a full-avalanche mix of one 64-bit word.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// FNV-1a hash of a role tag.
fn hash_tag(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives an independent child seed from a parent seed, a role tag, and an
/// index within that role.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ hash_tag(tag)) ^ index)
}

/// Convenience constructor for the project RNG.
pub fn rng_from_seed(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
