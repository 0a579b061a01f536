//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng`
//! seeded from a base seed plus a path of stream labels, so results do not
//! depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `labels` into `base`; distinct label paths give unrelated seeds.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(base), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(base: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, labels))
}

// stream labels
pub(crate) const FOLDS: u64 = 0xF01D;
pub(crate) const FOREST: u64 = 0xF0E5;
pub(crate) const BOOTSTRAP: u64 = 0xB007;
pub(crate) const DATA: u64 = 0xDA7A;
