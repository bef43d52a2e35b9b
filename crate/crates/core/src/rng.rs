//! Deterministic random streams derived from a base seed and a key path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stable 64-bit seed for `(seed, parts...)`.
pub fn derive_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn stream(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Hex digest of arbitrary bytes, used to name run directories.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_separated() {
        assert_eq!(derive_seed(1, &[b"a"]), derive_seed(1, &[b"a"]));
        assert_ne!(derive_seed(1, &[b"a"]), derive_seed(2, &[b"a"]));
        assert_ne!(derive_seed(1, &[b"ab"]), derive_seed(1, &[b"a", b"b"]));
        assert_eq!(hex_digest(b"").len(), 64);
    }
}
