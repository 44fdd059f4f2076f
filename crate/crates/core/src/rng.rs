//! Seeded random streams.
//!
//! Every stream in a sweep is derived from the base seed and a short tuple of
//! coordinates (grid point, replication, stream role) through SplitMix64, so
//! adding grid points never shifts the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream roles within one episode.
pub const STREAM_POLICY: u64 = 1;
pub const STREAM_REWARD: u64 = 2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds coordinates into a seed: `s <- splitmix64(s ^ splitmix64(c + 1))`.
pub fn mix_seed(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(base), |s, &c| {
        splitmix64(s ^ splitmix64(c.wrapping_add(1)))
    })
}

pub fn stream(base: u64, coords: &[u64]) -> SimRng {
    SimRng::seed_from_u64(mix_seed(base, coords))
}
