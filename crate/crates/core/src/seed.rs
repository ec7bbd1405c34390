//! Seed derivation.
//!
//! Every random stream in a run is keyed by `(master_seed, stream, trial, k)`
//! and expanded with SplitMix64 finalization, so the stream a worker sees
//! never depends on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every random stream in the crate.
pub type Rng = ChaCha8Rng;

/// Identifies which random stream a seed feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Mask = 2,
    Minibatch = 3,
    Data = 4,
    Verify = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `master`, the stream tag and each coordinate through SplitMix64.
pub fn derive_seed(master: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ (stream as u64).rotate_left(32));
    for &c in coords {
        h = splitmix64(h ^ c);
    }
    h
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derive_rng(master: u64, stream: Stream, coords: &[u64]) -> Rng {
    rng_from_seed(derive_seed(master, stream, coords))
}
