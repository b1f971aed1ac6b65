//! Stable seed derivation.
//!
//! A stream seed is the first eight bytes (little-endian) of
//! `SHA-256(master_le ‖ len(part₁)_le ‖ part₁ ‖ …)`. The scheme depends only on
//! the master seed and the identifying parts, so results do not depend on
//! scheduling or worker count.

use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::model::SimRng;

pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator seeded from [`derive_seed`].
pub fn stream_rng(master: u64, parts: &[&str]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, parts))
}

/// Environment and policy generators for one run; they share a seed but draw
/// from disjoint ChaCha streams.
pub fn run_streams(master: u64, parts: &[&str]) -> (SimRng, SimRng) {
    let seed = derive_seed(master, parts);
    let env = SimRng::seed_from_u64(seed);
    let mut policy = SimRng::seed_from_u64(seed);
    policy.set_stream(1);
    (env, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_separates_parts() {
        let a = derive_seed(7, &["exp1", "p3"]);
        assert_eq!(a, derive_seed(7, &["exp1", "p3"]));
        assert_ne!(a, derive_seed(8, &["exp1", "p3"]));
        assert_ne!(a, derive_seed(7, &["exp1", "p4"]));
        // length prefix keeps concatenations apart
        assert_ne!(derive_seed(7, &["ab", "c"]), derive_seed(7, &["a", "bc"]));
    }

    #[test]
    fn run_streams_differ() {
        let (mut e, mut p) = run_streams(1, &["x"]);
        let a: u64 = e.random();
        let b: u64 = p.random();
        assert_ne!(a, b);
    }
}
