//! Deterministic derivation of independent RNG streams from one root seed.
//!
//! Every source of randomness in the crate draws from a stream identified by
//! a `(root, purpose, index)` triple, so adding a new consumer (an extra
//! restart, another replication) never perturbs existing streams. The
//! derivation is a fixed FNV-1a / SplitMix64 construction rather than
//! `std::hash` because the mapping must stay stable across platforms and
//! toolchain releases — reproducibility guarantees depend on it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash = (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of the stream named `purpose` at position `index`.
pub fn derive_seed(root: u64, purpose: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    h = fnv1a(h, &root.to_le_bytes());
    h = fnv1a(h, purpose.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, &index.to_le_bytes());
    splitmix64(h)
}

/// A ChaCha8 generator positioned at the start of the derived stream.
pub fn stream_rng(root: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, index))
}
