//! Seed derivation and reproducible random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream whose
//! seed is a splitmix64 mix of a master seed and the coordinates of the
//! work item (sample size, replication, estimator, ...). Work items can then
//! run on any number of threads and still produce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with an ordered list of keys.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the family rooted at `seed`.
pub fn substream(seed: u64, index: u64) -> StreamRng {
    stream(derive_seed(seed, &[index]))
}

/// Tags keeping estimator streams apart when they share `(n, rep)`.
pub mod tags {
    pub const DATA: u64 = 0xD474;
    pub const FGSM: u64 = 0xF65A;
    pub const PENALIZED: u64 = 0xB45E;
    pub const LIMIT: u64 = 0x11A1;
    pub const MOMENTS: u64 = 0x30E7;
}
