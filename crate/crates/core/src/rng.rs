//! Seeded randomness.
//!
//! Every random stream in the crate is a xoshiro256** generator. Streams that
//! need to be independent of evaluation order (per-query augmentation, per-seed
//! initialization) derive their seed with [`derive_seed`], a SplitMix64 fold
//! over the parent seed and a list of salts.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256StarStar as LensRng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `salts` into `seed`. Different salt sequences give unrelated seeds.
pub fn derive_seed(seed: u64, salts: &[u64]) -> u64 {
    salts
        .iter()
        .fold(splitmix64(seed), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn rng_from_seed(seed: u64) -> LensRng {
    LensRng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, salts: &[u64]) -> LensRng {
    rng_from_seed(derive_seed(seed, salts))
}

/// Salts naming the independent streams of a run.
pub mod stream {
    pub const ENCODER_INIT: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const DECODER_INIT: u64 = 5;
    pub const CODEBOOK_INIT: u64 = 6;
    pub const FINETUNE_SHUFFLE: u64 = 7;
    pub const GLOBAL_INJECT: u64 = 8;
    pub const LOCAL_INJECT: u64 = 9;
    pub const BASELINE_INIT: u64 = 10;
}
