//! Seed derivation. Every stochastic stage draws from its own ChaCha8 stream so
//! that adding draws to one stage never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named sub-stream.
pub fn derive(seed: u64, stream: &str) -> u64 {
    let mut h = mix(seed);
    for b in stream.bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}

/// Derives an independent seed for an indexed sub-stream.
pub fn derive_indexed(seed: u64, stream: &str, index: u64) -> u64 {
    mix(derive(seed, stream) ^ mix(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    rng(derive(seed, name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(derive(1, "a"), derive(1, "b"));
        assert_ne!(derive(1, "a"), derive(2, "a"));
        assert_ne!(derive_indexed(1, "a", 0), derive_indexed(1, "a", 1));
        assert_eq!(derive(7, "noise"), derive(7, "noise"));
    }
}
