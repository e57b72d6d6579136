//! Deterministic random streams.
//!
//! Every stochastic step draws from a ChaCha8 stream keyed by a user seed, a
//! fixed per-purpose domain tag, and an index (frame, instance, fold, epoch).
//! Streams for different purposes never overlap, so adding a consumer in one
//! stage does not perturb another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for [`stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    SourcePerturbation = 1,
    Augmentation = 2,
    DetectorNoise = 3,
    WeightInit = 4,
    Shuffle = 5,
    Folds = 6,
    Dataset = 7,
    Training = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a domain tag and index into a new 64-bit seed.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain as u64)) ^ index)
}

/// A reproducible RNG for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, index))
}
