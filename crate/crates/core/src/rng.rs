//! Seeding helpers. Every random decision in a run descends from one `u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from `(seed, salt)` without touching any
/// shared generator, so per-item randomness (segment jitter, per-request
/// noise) does not depend on processing order.
pub fn derive(seed: u64, salt: u64) -> SimRng {
    seeded(mix(seed ^ mix(salt.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

/// splitmix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
