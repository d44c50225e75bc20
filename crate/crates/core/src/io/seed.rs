//! Deterministic seed derivation.
//!
//! Every generator and trainer draws randomness from a stream keyed by
//! `(global_seed, namespace, index)`. The derived 64-bit seed is
//!
//! ```text
//! fnv1a64(namespace || 0xFF || global_seed.to_le_bytes() || index.to_le_bytes())
//! ```
//!
//! passed through the SplitMix64 finalizer, then used to seed a ChaCha8
//! stream. The `0xFF` byte never occurs in UTF-8, so distinct
//! `(namespace, index)` pairs never hash the same byte string.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The random stream type used across the crate.
pub type StreamRng = ChaCha8Rng;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// SplitMix64 output finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hex-encoded FNV-1a of a byte slice; the content hash written to manifests.
pub fn content_hash(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedScheme {
    pub global_seed: u64,
}

impl SeedScheme {
    pub fn new(global_seed: u64) -> Self {
        Self { global_seed }
    }

    pub fn derive(&self, namespace: &str, index: u64) -> u64 {
        let mut buf = Vec::with_capacity(namespace.len() + 17);
        buf.extend_from_slice(namespace.as_bytes());
        buf.push(0xFF);
        buf.extend_from_slice(&self.global_seed.to_le_bytes());
        buf.extend_from_slice(&index.to_le_bytes());
        splitmix64(fnv1a64(&buf))
    }

    /// A fresh stream for `(namespace, index)`.
    pub fn rng(&self, namespace: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(self.derive(namespace, index))
    }
}
