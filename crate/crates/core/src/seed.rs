//! Deterministic seed derivation.
//!
//! Every randomized step in the pipeline derives its RNG from a master seed
//! plus a context label, so that reruns and parallel execution produce
//! bit-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from a master seed and an arbitrary context label.
///
/// The derivation is a SHA-256 over the seed bytes and the label, so distinct
/// labels give statistically independent streams and the mapping is stable
/// across platforms and releases.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Derives a child seed from a master seed and an index (e.g. a bootstrap
/// resample or hyperparameter trial number).
pub fn derive_seed_indexed(master: u64, label: &str, index: u64) -> u64 {
    derive_seed(master, &format!("{label}/{index}"))
}

/// Seeded RNG used throughout the crate. ChaCha has a stable, portable
/// stream for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
