//! Seed derivation and counter-based streams.
//!
//! A named purpose (covariates, truth, totals, counts) and the replicate
//! index are folded into the user seed with SplitMix64. Each observation row
//! then reads from its own ChaCha stream (`set_stream(row)`), so a row's
//! draws do not depend on how many rows came before it or on thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod purpose {
    pub const COVARIATES: u64 = 1;
    pub const TRUTH: u64 = 2;
    pub const TOTALS: u64 = 3;
    pub const COUNTS: u64 = 4;
    pub const SEARCH: u64 = 5;
}
