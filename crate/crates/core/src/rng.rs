//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`SeededRng`] (ChaCha8), which
//! produces the same stream on every platform for a given seed. Components
//! derive their own seeds from one global seed through [`substream`], so
//! changing one component's configuration does not shift another's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives the seed of the named substream of `seed`.
///
/// FNV-1a over the name, combined with the parent seed and finished with the
/// splitmix64 mixer.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

/// Indexed variant of [`substream`], e.g. one stream per fold.
pub fn substream_indexed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(substream(seed, name).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
