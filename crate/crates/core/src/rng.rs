//! Seed splitting.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` built here.
//! Replication `r` of a study seeded with `base` uses
//! `splitmix64(base ^ splitmix64(r + 1))`, so one replication's seed does
//! not depend on any other replication. Within a seed, independent tasks
//! use distinct ChaCha streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for data generation.
pub const STREAM_DATA: u64 = 0;
/// Stream used for random initialisations inside estimation.
pub const STREAM_ESTIMATE: u64 = 1;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child `index` of `base`.
pub fn child_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn child_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| child_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn streams_are_independent() {
        let x: u64 = stream_rng(3, 0).gen();
        let y: u64 = stream_rng(3, 1).gen();
        assert_ne!(x, y);
        assert_eq!(x, stream_rng(3, 0).gen::<u64>());
    }
}
