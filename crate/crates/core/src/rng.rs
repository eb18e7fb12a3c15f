//! Named random streams derived from one master seed.
//!
//! Every stochastic component draws from its own ChaCha stream, selected by
//! `(component, index)` on top of the master seed. Changing how one component
//! consumes randomness never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Stream {
    /// Cluster means of a synthetic mixture.
    MixtureMeans = 1,
    /// Sample noise of a synthetic mixture; index selects train/test draws.
    MixtureSamples = 2,
    /// Initial labeled/unlabeled split and pool subsampling.
    Split = 3,
    /// Student parameter initialization; index is the round.
    Init = 4,
    /// Mini-batch shuffling; index is the round.
    Shuffle = 5,
    /// Selection strategy randomness; index is the round.
    Strategy = 6,
    /// k-means++ seeding for diagnostics; index is the round.
    Metrics = 7,
    /// Teacher construction (bias centroids, per-sample offsets).
    Teacher = 8,
}

pub fn stream(master: u64, component: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((component as u64) << 40) ^ index);
    rng
}

/// SplitMix64 finalizer, used to turn `(salt, id)` pairs into per-item seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
