//! Deterministic hierarchical random-stream splitting.
//!
//! Every simulating operation takes a [`StreamKey`] instead of a shared RNG.
//! A key identifies one logical random stream; `child(i)` derives the key of
//! the i-th sub-stream. Parallel work units each receive their own child key
//! and instantiate their own generator, so results do not depend on thread
//! scheduling, and a run is reproducible from its master seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

// SplitMix64 finalizer; full-avalanche mix of the accumulated path state.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifier of one deterministic random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    /// Root key of the hierarchy for a given master seed.
    pub fn from_seed(master_seed: u64) -> Self {
        StreamKey(mix(master_seed ^ GOLDEN_GAMMA))
    }

    /// Key of the `index`-th child stream.
    #[must_use]
    pub fn child(self, index: u64) -> Self {
        StreamKey(mix(
            self.0
                .wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))),
        ))
    }

    /// Instantiate the generator for this stream.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
