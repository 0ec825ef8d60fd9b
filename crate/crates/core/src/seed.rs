//! Per-component random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fans a run seed out into independent ChaCha streams. Each component asks
/// for its stream by a fixed id, so adding a component never shifts the
/// streams of the others.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    /// Child tree for a sub-component, e.g. one worker or one evaluation.
    pub fn child(&self, id: u64) -> SeedTree {
        SeedTree::new(splitmix64(self.seed ^ splitmix64(id.wrapping_add(0x5eed))))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream ids used across the crate.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const GOALS: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const WARMUP: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const AUX: u64 = 9;
}
