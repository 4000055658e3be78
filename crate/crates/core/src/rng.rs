//! Seed derivation.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by the master
//! seed and a path of counters (trial, symbol, purpose). Streams are therefore
//! independent of evaluation order and thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. The discriminant is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    PhaseNoise = 2,
    Channel = 3,
    Alc = 4,
    Dlc = 5,
    GridPoint = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path of counters into a 64-bit sub-seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
