//! Seed derivation, index fingerprints and small numeric helpers shared by
//! every module.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seeded generator used everywhere. ChaCha is stable across platforms and
/// crate versions, which keeps reports byte-identical.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent seed from a base seed and a stable task key.
pub fn derive_seed(base: u64, key: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for k in key {
        h.update(k.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Stable 64-bit key for a string label (family names, grid fingerprints).
pub fn str_key(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Order-insensitive fingerprint of a set of row indices. Every fitted
/// transform stores the hash of the rows it saw; audits compare it against
/// the hash of the split or fold it was supposed to be fitted on.
pub fn index_hash(idx: &[usize]) -> String {
    let mut sorted = idx.to_vec();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    h.update((sorted.len() as u64).to_le_bytes());
    for i in sorted {
        h.update((i as u64).to_le_bytes());
    }
    hex::encode(&h.finalize()[..12])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median with the two-middle average for even counts. NaN on empty input.
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Quantile by linear interpolation between order statistics at position
/// `(n - 1) * q`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (v.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (v[hi] - v[lo]) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_hash_ignores_order() {
        assert_eq!(index_hash(&[3, 1, 2]), index_hash(&[1, 2, 3]));
        assert_ne!(index_hash(&[1, 2]), index_hash(&[1, 2, 3]));
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(median(&v), 2.5);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
    }

    #[test]
    fn derived_seeds_differ_by_key() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_eq!(derive_seed(9, &[4, 2]), derive_seed(9, &[4, 2]));
    }
}
