//! Reproducible random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream addressed
//! by `(seed, purpose, order, index)`. The ChaCha key is derived from the first
//! three, the 64-bit stream id is the index. Because disorder entries are keyed
//! by blocks of their colexicographic rank (which does not depend on the dimension), the
//! tensor sampled at dimension `n` is exactly the leading block of the tensor
//! sampled at any larger dimension with the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Disorder = 1,
    Topup = 2,
    Restart = 3,
    Chain = 4,
    Audit = 5,
    Lindeberg = 6,
    Sphere = 7,
    Experiment = 8,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of tags into a child seed. Order matters.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(mix64(root), |acc, &t| mix64(acc ^ mix64(t.wrapping_add(GOLDEN))))
}

/// Hashes a string label to a tag usable with [`derive_seed`].
pub fn label_tag(label: &str) -> u64 {
    // FNV-1a, then mixed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(h)
}

fn key(seed: u64, purpose: Purpose, order: u64) -> [u8; 32] {
    let mut k = [0u8; 32];
    let mut s = derive_seed(seed, &[purpose as u64, order]);
    for chunk in k.chunks_mut(8) {
        s = mix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    k
}

/// A keyed family of streams; [`StreamFamily::stream`] selects one member.
#[derive(Clone)]
pub struct StreamFamily {
    base: ChaCha8Rng,
}

impl StreamFamily {
    pub fn new(seed: u64, purpose: Purpose, order: u64) -> Self {
        Self {
            base: ChaCha8Rng::from_seed(key(seed, purpose, order)),
        }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(index);
        r.set_word_pos(0);
        r
    }
}

/// Convenience for a single stream.
pub fn stream(seed: u64, purpose: Purpose, order: u64, index: u64) -> ChaCha8Rng {
    StreamFamily::new(seed, purpose, order).stream(index)
}
