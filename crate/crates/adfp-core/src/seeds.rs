//! Deterministic seed derivation. Every random stream in an experiment is
//! keyed by (root seed, purpose label, index), so trials are independent
//! and any run is a pure function of the root seed.

use crate::greenlist::mix64;

/// Derives a child seed from a root seed, a purpose label, and an index.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut d = mix64(root);
    for &b in label.as_bytes() {
        d = mix64(d ^ b as u64);
    }
    mix64(d ^ index)
}
