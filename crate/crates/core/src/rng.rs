//! Counter-derived random substreams.
//!
//! A stream is a 256-bit key obtained by folding a path of 64-bit tags into
//! the master seed. Each key seeds an independent ChaCha8 generator, so a
//! replicate's randomness is a pure function of `(seed, tag, index, lane)`
//! and never of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator and Gaussian method recorded in batch metadata.
pub const SAMPLER_ID: &str = "chacha8/ziggurat-v1";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    key: [u64; 4],
}

impl RngStream {
    pub fn root(master_seed: u64) -> Self {
        let mut key = [0u64; 4];
        let mut state = master_seed;
        for word in &mut key {
            state = splitmix64(state);
            *word = state;
        }
        Self { key }
    }

    /// Derives the substream addressed by `tag` below this one.
    pub fn child(&self, tag: u64) -> Self {
        let mut key = [0u64; 4];
        let mut carry = splitmix64(tag ^ 0xD1B5_4A32_D192_ED03);
        for (i, word) in key.iter_mut().enumerate() {
            let lane = splitmix64(tag.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN)));
            carry = splitmix64(self.key[i] ^ lane ^ carry.rotate_left(23));
            *word = carry;
        }
        Self { key }
    }

    pub fn path(master_seed: u64, tags: &[u64]) -> Self {
        tags.iter().fold(Self::root(master_seed), |s, &t| s.child(t))
    }

    /// A 64-bit seed for a derived experiment cell.
    pub fn derive_seed(master_seed: u64, tags: &[u64]) -> u64 {
        use rand::RngCore;
        Self::path(master_seed, tags).rng().next_u64()
    }

    pub fn rng(&self) -> StreamRng {
        let mut seed = [0u8; 32];
        for (chunk, word) in seed.chunks_exact_mut(8).zip(self.key) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Fixed tags for the lanes inside one replicate.
pub mod lane {
    pub const X: u64 = 0x10;
    pub const Z: u64 = 0x11;
    pub const S: u64 = 0x12;
    pub const AUX: u64 = 0x13;
    pub const FIXED_S: u64 = 0x20;
    pub const ORACLE: u64 = 0x30;
}
