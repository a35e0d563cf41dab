//! Seed derivation. Every random stream in a run is keyed by the single
//! user seed plus a purpose tag, so one knob reproduces the whole run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `seed` combined with the FNV-1a hash of `tag`, mixed through splitmix64.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ fnv1a(tag.as_bytes()))
}

/// Same as [`derive_seed`] with an extra index (epoch, scope number, ...).
pub fn derive_seed_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, tag) ^ splitmix64(index))
}

pub fn rng_for(seed: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag))
}

pub fn rng_for_indexed(seed: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed_indexed(seed, tag, index))
}
