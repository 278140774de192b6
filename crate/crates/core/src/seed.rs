//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a master seed plus a small tuple of
//! integers (group index, chunk index, replicate index, sharing-set bits, ...). Streams
//! never depend on scheduling order, so parallel and serial runs agree bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed used when the caller does not supply one.
pub const DEFAULT_SEED: u64 = 20_240_917;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a stream key.
#[inline]
pub fn derive(seed: u64, key: u64) -> u64 {
    splitmix64(seed ^ splitmix64(key.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Derives a child seed from a sequence of keys.
pub fn derive_path(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(seed, |s, &k| derive(s, k))
}

/// Generator for a derived stream.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream keys for the different consumers of randomness.
pub(crate) mod stream {
    pub const LATENT: u64 = 1;
    pub const OBSERVATION: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const MOMENTS: u64 = 4;
    pub const ORACLE: u64 = 5;
    pub const SNR: u64 = 6;
    pub const REPLICATE: u64 = 7;
    pub const SECOND_CORE: u64 = 8;
}
