//! Seedable, splittable random streams.
//!
//! Every random draw in the crate goes through a [`RngSeed`], a `(seed, stream)` pair that maps
//! to a ChaCha8 generator: the 256-bit key is expanded from `seed` with `SeedableRng::seed_from_u64`
//! and the ChaCha stream id is set to `stream`.
//!
//! Child streams are derived with [`RngSeed::split`]: the child of `(seed, stream)` at `index`
//! is `(mix(seed, stream), index)`, where `mix` is two rounds of the SplitMix64 finalizer. A
//! Monte Carlo study therefore hands trial `i` the stream `root.split(1).split(i)` and the result
//! does not depend on how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        RngSeed { seed, stream: 0 }
    }

    pub fn split(&self, index: u64) -> Self {
        RngSeed {
            seed: splitmix64(
                self.seed ^ splitmix64(self.stream.wrapping_add(0x9e37_79b9_7f4a_7c15)),
            ),
            stream: index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed::new(seed)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
