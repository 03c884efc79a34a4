//! Named, seed-derived random streams.
//!
//! Every component draws its randomness from a stream identified by a
//! label and an index, derived from one root seed. Sub-runs (a single
//! training step, one trial of a checker, one sweep grid point) can be
//! replayed in isolation by reconstructing their stream seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive the seed of the stream `(label, index)` from a root seed.
///
/// FNV-1a over the label bytes mixed with the root seed and index through
/// splitmix64 finalizers, so nearby indices give uncorrelated streams.
pub fn stream_seed(root: u64, label: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(index))
}

/// RNG for the stream `(label, index)` under `root`.
pub fn stream_rng(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, label, index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
