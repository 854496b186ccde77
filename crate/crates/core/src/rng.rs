//! Seed plumbing. Every stochastic component takes its own generator derived
//! from a root seed and a stream label, so parallel work stays reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream))
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Stream ids for the separate random sources of an experiment.
pub mod streams {
    pub const DEMOS: u64 = 1;
    pub const TEST_GAMES: u64 = 2;
    pub const HMM_INIT: u64 = 3;
    pub const LEARNER: u64 = 4;
    pub const ROLLOUT: u64 = 5;
    pub const MINIBATCH: u64 = 6;
    pub const MIXING: u64 = 7;
    pub const VALIDATION: u64 = 8;
    pub const SHUFFLE: u64 = 9;
}
