//! Deterministic stream derivation.
//!
//! Every random object in the crate is drawn from a `ChaCha8Rng` seeded
//! through a [`StreamKey`]. Keys form a tree: mixing a tag into a key yields a
//! child key, and distinct tag paths give statistically independent streams.
//! This is what lets a sampler resample one player's private randomness
//! without disturbing anybody else's, and what makes every experiment
//! replayable from a single `u64` seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A point in the derivation tree. Cheap to copy; derive children freely.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

/// splitmix64 finalizer. Good avalanche on sequential tag mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(mix(seed))
    }

    /// Child key for a numeric tag.
    pub fn derive(self, tag: u64) -> Self {
        StreamKey(mix(self.0 ^ mix(tag.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Child key for a short label. Labels keep call sites readable where a
    /// bare integer would be opaque.
    pub fn derive_label(self, label: &str) -> Self {
        let mut acc = 0xcbf2_9ce4_8422_2325u64;
        for b in label.bytes() {
            acc = (acc ^ u64::from(b)).wrapping_mul(0x1000_0000_01b3);
        }
        self.derive(acc)
    }

    /// Materialize the stream at this key.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}
