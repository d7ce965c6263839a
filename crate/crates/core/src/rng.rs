//! Deterministic random streams.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(seed, role, index)`. The key is folded through FNV-1a (for the role
//! string) and SplitMix64, then seeds a ChaCha8 generator, so streams for
//! different steps or roles never depend on the order they are created in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a hash of a role tag.
pub fn tag_hash(role: &str) -> u64 {
    role.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed for `(seed, role, index)`.
pub fn derive_seed(seed: u64, role: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ tag_hash(role)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(seed: u64, role: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, role, index))
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
