//! Independent deterministic random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, parts))
}

/// Purpose tags keeping streams disjoint.
pub mod tag {
    pub const INIT_ENCODER: u64 = 1;
    pub const INIT_TGSL: u64 = 2;
    pub const TRAIN_BATCH: u64 = 3;
    pub const TRAIN_NEGATIVES: u64 = 4;
    pub const EVAL_NEGATIVES: u64 = 5;
    pub const EVAL_VIEW: u64 = 6;
    pub const TRAIN_SAMPLING: u64 = 7;
    pub const EVAL_SAMPLING: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_parts_give_distinct_seeds() {
        assert_eq!(derive(1, &[2, 3]), derive(1, &[2, 3]));
        assert_ne!(derive(1, &[2, 3]), derive(1, &[3, 2]));
        assert_ne!(derive(1, &[2]), derive(2, &[2]));
    }
}
