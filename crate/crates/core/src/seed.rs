//! Deterministic, splittable random streams.
//!
//! Every simulation takes a `u64` seed. Replica `i` of a batch draws from
//! stream `i` of a ChaCha generator keyed by that seed, so replicas are
//! independent of scheduling order and can run on any worker.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for a single-shot computation.
pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for replica `index` of a batch keyed by `seed`.
pub fn replica_rng(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed; used when one replica needs several independent
/// sub-computations that each take a plain seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    replica_rng(seed, index).next_u64()
}
