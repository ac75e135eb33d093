//! Seed derivation.
//!
//! Every random stream in the crate is derived from one run seed by hashing a
//! component name and an index, so a partial rerun (one fold, one pass) draws
//! exactly the numbers it would have drawn inside a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Child seed for `component` number `index` under `parent`.
///
/// `derive_seed(s, name, i)` is `splitmix64(s ^ splitmix64(fnv1a(name) ^ splitmix64(i)))`.
pub fn derive_seed(parent: u64, component: &str, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(component) ^ splitmix64(index)))
}

/// ChaCha8 generator for a derived seed.
pub fn rng_for(parent: u64, component: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, component, index))
}
