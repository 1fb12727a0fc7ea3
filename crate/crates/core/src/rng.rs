//! Deterministic random streams.
//!
//! A run has one root seed. Every stochastic consumer derives its own stream
//! from `(root seed, purpose label)`, so adding a consumer never perturbs the
//! draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

fn seed_bytes(root: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

/// Child stream for `label` under `root`.
pub fn child_rng(root: u64, label: &str) -> StreamRng {
    StreamRng::from_seed(seed_bytes(root, label))
}

/// Child seed for `label` under `root`, for APIs that take a plain `u64`.
pub fn child_seed(root: u64, label: &str) -> u64 {
    let bytes = seed_bytes(root, label);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_label_separated() {
        let a: u64 = child_rng(7, "augment").random();
        let b: u64 = child_rng(7, "augment").random();
        let c: u64 = child_rng(7, "splits").random();
        let d: u64 = child_rng(8, "augment").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(child_seed(1, "x"), child_seed(1, "x"));
    }
}
