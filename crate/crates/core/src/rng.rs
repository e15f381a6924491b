//! Named random sub-streams.
//!
//! Every stochastic step (initialization, epoch shuffles, corpus synthesis)
//! draws from its own stream derived from the run seed and a fixed name, so
//! enabling one feature never shifts the random sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a 64-bit seed from `(seed, name)`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64, name: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}
