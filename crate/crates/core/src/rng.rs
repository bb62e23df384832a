//! Seed derivation. Every random stream in a run is keyed by
//! `(master seed, stream tag, node, round)` so that results do not depend on
//! the order in which nodes happen to be processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags. Distinct tags give independent streams for the same key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Churn = 1,
    Entry = 2,
    Join = 3,
    Walk = 4,
    Maintain = 5,
    Accept = 6,
    Adversary = 7,
    Initiate = 8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a master seed and a key.
pub fn derive_seed(master: u64, stream: Stream, node: u64, round: u64) -> u64 {
    let mut h = splitmix64(master ^ 0x5851_F42D_4C95_7F2D);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ node);
    splitmix64(h ^ round.rotate_left(17))
}

pub fn derive_rng(master: u64, stream: Stream, node: u64, round: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream, node, round))
}
