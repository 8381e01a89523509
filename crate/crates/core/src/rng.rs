//! Seed derivation for independent, reproducible random substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep substreams for different purposes disjoint.
pub mod tag {
    pub const READOUT: u64 = 0x5245_4144;
    pub const FEATURE: u64 = 0x4645_4154;
    pub const DATASET: u64 = 0x4441_5441;
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const EVAL: u64 = 0x4556_414c;
    pub const VERIFY: u64 = 0x5645_5249;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit seed. Stable across platforms
/// and toolchain versions, unlike `std::hash`.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

pub fn substream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(&[1, 2]), mix(&[2, 1]));
        assert_eq!(mix(&[7, 8, 9]), mix(&[7, 8, 9]));
        assert_ne!(mix(&[0]), mix(&[0, 0]));
    }
}
