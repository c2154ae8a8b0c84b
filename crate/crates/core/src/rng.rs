//! Seeded, splittable random streams.
//!
//! Every random draw in the library comes from a [`ChaCha20Rng`] whose seed is
//! derived from a caller-supplied 64-bit root seed and a list of stream tags.
//! Distinct tag lists give statistically independent streams, so work can be
//! split across threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with stream tags into a 256-bit ChaCha key.
pub fn derive_key(seed: u64, tags: &[u64]) -> [u8; 32] {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    key
}

/// Independent stream for `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    ChaCha20Rng::from_seed(derive_key(seed, tags))
}

/// Derives a child seed, e.g. one per pipeline stage.
pub fn child_seed(seed: u64, tags: &[u64]) -> u64 {
    let k = derive_key(seed, tags);
    u64::from_le_bytes(k[..8].try_into().unwrap())
}
