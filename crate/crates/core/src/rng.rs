//! Seed derivation. Every randomized component draws from a ChaCha stream
//! selected by `(seed, stream)`, so the order in which workers run never
//! changes a result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Streams reserved for components that share a user seed.
pub(crate) mod streams {
    pub const SPLIT: u64 = 1 << 40;
    pub const KFOLD: u64 = 2 << 40;
    pub const BOOST_HOLDOUT: u64 = 3 << 40;
    pub const BOOST_COLUMNS: u64 = 4 << 40;
    pub const SYNTH: u64 = 5 << 40;
}
