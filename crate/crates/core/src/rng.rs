//! Seed derivation.
//!
//! Every stochastic step draws from its own ChaCha stream whose seed is a
//! hash of the parent seed and a stream label. Results therefore never depend
//! on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `seed`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(stream.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Child seed keyed by a label as well as an index.
pub fn derive_labeled(seed: u64, label: &str, stream: u64) -> u64 {
    let h = label
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3));
    derive(derive(seed, h), stream)
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn child(seed: u64, stream: u64) -> Rng {
    rng(derive(seed, stream))
}
