//! Named random sub-streams expanded from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_BALANCE: &str = "balance";
pub const STREAM_FOREST: &str = "forest";
pub const STREAM_VAE_INIT: &str = "vae-init";
pub const STREAM_VAE_NOISE: &str = "vae-noise";
pub const STREAM_GEN: &str = "gen";

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for the sub-stream `name` of the run seed `seed`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut buf = seed.to_le_bytes().to_vec();
    buf.extend_from_slice(name.as_bytes());
    fnv1a(&buf)
}

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

/// Stream `index` of a seeded generator, e.g. one per tree.
pub fn indexed_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
