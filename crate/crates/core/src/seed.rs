//! Deterministic seed derivation.
//!
//! Independent work items (splits, grid points, ensemble members) each get
//! their own generator derived from `(seed, stream, index)`, so results do not
//! depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn derive(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ hash_str(stream)).wrapping_add(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, stream: &str, index: u64) -> Rng {
    rng(derive(seed, stream, index))
}

/// First 16 hex digits of the SHA-256 of `key=value` lines, used to tag
/// artifacts with the configuration that produced them.
pub fn config_hash<K: AsRef<str>, V: AsRef<str>>(kv: &[(K, V)]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (k, v) in kv {
        h.update(k.as_ref().as_bytes());
        h.update(b"=");
        h.update(v.as_ref().as_bytes());
        h.update(b"\n");
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}
