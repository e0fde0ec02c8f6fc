//! Seed derivation for named random substreams.
//!
//! Every stage draws from its own substream of the root seed (`data`, `mask`,
//! `init`, `shuffle`, `bootstrap`, `shap`), so re-running one stage with the
//! same seed reproduces it bit-exactly regardless of what ran before.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the seed of a named substream, with optional indices (epoch, batch,
/// sample, ...) appended to the name.
pub fn derive_seed(root: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, name.as_bytes());
    h = fnv1a(h, &root.to_le_bytes());
    for &ix in indices {
        h = fnv1a(h, &ix.to_le_bytes());
    }
    mix(h)
}

/// RNG for a named substream of the root seed.
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name, &[]))
}

/// RNG for a named substream with indices, e.g. `("shuffle", [epoch])`.
pub fn substream_indexed(root: u64, name: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name, indices))
}
