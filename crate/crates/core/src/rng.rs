//! Seed derivation for reproducible, order-independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a path of integer keys below `seed`.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn child_rng(seed: u64, keys: &[u64]) -> Rng {
    rng_from(derive(seed, keys))
}
