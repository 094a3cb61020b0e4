//! Seeded random streams.
//!
//! All randomness in the engine flows from ChaCha8 streams so that runs are
//! bit-reproducible across platforms. Child streams are derived from a parent
//! seed and a label with splitmix64 mixing, which keeps replicas, episodes and
//! per-slice generators independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// One round of splitmix64.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the child stream `label` under `parent`.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    mix(mix(parent) ^ label.rotate_left(17))
}

pub fn stream(parent: u64, label: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(parent, label))
}
