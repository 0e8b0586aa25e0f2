//! Seed derivation. Every random stream in a run is keyed by the experiment
//! seed plus a path of integers, so results do not depend on the order in
//! which clients are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream tags.
pub(crate) mod tag {
    pub const INIT: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const CLIENT: u64 = 3;
    pub const DATA: u64 = 4;
    pub const PARTITION: u64 = 5;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_order_sensitive() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(2, &[2]));
        assert_eq!(derive_seed(9, &[4, 5]), derive_seed(9, &[4, 5]));
    }
}
