//! Derived random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(seed, index, tag)`, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes, finished with splitmix.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(h)
}

/// Mixes `(seed, index, tag)` into a single 64-bit seed.
pub fn derive_seed(seed: u64, index: u64, tag: &str) -> u64 {
    let a = splitmix(seed ^ tag_hash(tag));
    splitmix(a ^ splitmix(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn stream(seed: u64, index: u64, tag: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, index, tag))
}
