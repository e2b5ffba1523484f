//! Named random streams derived from one master seed.
//!
//! Each consumer (environment, leader, each follower, ...) gets its own
//! ChaCha stream keyed by `sha256(master || name)`, so adding or removing an
//! agent never shifts the draws seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

fn digest(master: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, name: &str) -> StreamRng {
    ChaCha8Rng::from_seed(digest(master, name))
}

/// A 64-bit child seed, for handing to APIs that take `u64`.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    let d = digest(master, name);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
