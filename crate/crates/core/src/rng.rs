//! Deterministic randomness derivation.
//!
//! Every random stream in the crate is a ChaCha generator keyed by a SHA-256
//! digest of `(domain, master seed, tags...)`. Streams for different users,
//! rounds or trials are therefore independent of each other and of the order
//! in which they are consumed.

use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use sha2::{Digest, Sha256};

/// Generator used for simulation streams (clustering, roles, SGD shuffles).
pub type SimRng = ChaCha8Rng;

/// 32-byte key derived from a domain label, a master seed and a tag path.
pub fn derive_key(domain: &str, master: u64, tags: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(master.to_le_bytes());
    for t in tags {
        h.update(t.to_le_bytes());
    }
    h.finalize().into()
}

pub fn derive_rng(domain: &str, master: u64, tags: &[u64]) -> SimRng {
    SimRng::from_seed(derive_key(domain, master, tags))
}

/// Cryptographic-strength stream for mask expansion and Shamir polynomials.
pub fn derive_crypto_rng(domain: &str, master: u64, tags: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_key(domain, master, tags))
}

/// Uniform value in `[0, 1)` derived from a key path, without building a
/// generator.
pub fn derive_unit(domain: &str, master: u64, tags: &[u64]) -> f64 {
    let key = derive_key(domain, master, tags);
    let bits = u64::from_le_bytes(key[..8].try_into().expect("8 bytes"));
    (bits >> 11) as f64 / (1u64 << 53) as f64
}
