//! Seeded, counter-based random streams.
//!
//! A stream is identified by `(seed, domain, index)`. The seed and domain are
//! mixed into a ChaCha key; the index selects the ChaCha stream. Per-pixel
//! draws use the pixel index, so results do not depend on iteration order or
//! on how work is partitioned.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct constants keep unrelated draws decorrelated even
/// when they share a user seed.
pub mod domain {
    pub const CLEAN: u64 = 0x636c_6561_6e00_0001;
    pub const NOISE: u64 = 0x6e6f_6973_6500_0002;
    pub const PERTURB: u64 = 0x7065_7274_7500_0003;
    pub const TRAIN: u64 = 0x7472_6169_6e00_0004;
    pub const INIT: u64 = 0x696e_6974_0000_0005;
    pub const LOSS: u64 = 0x6c6f_7373_0000_0006;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit sub-seed; used to give each image of a batch its own seed.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ index)
}

/// Returns the generator for stream `index` of `(seed, domain)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let a = splitmix64(seed);
    let b = splitmix64(a ^ domain);
    let c = splitmix64(b);
    let d = splitmix64(c ^ domain.rotate_left(17));
    for (chunk, word) in key.chunks_exact_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
